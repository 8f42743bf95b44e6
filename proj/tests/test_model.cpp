#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "stsam/gradcheck.hpp"
#include "stsam/model.hpp"
#include "stsam/rng.hpp"
#include "stsam/training.hpp"

using namespace stsam;

namespace {

HyperParams tiny_hp(std::size_t n, std::size_t d = 4, std::size_t heads = 2,
                    std::size_t k = 2, std::size_t ff = 8,
                    std::size_t blocks = 1) {
  HyperParams hp;
  hp.d = d;
  hp.heads = heads;
  hp.k = k;
  hp.ff_dim = ff;
  hp.n_blocks = blocks;
  hp.dropout_rate = 0.0;
  hp.n_regions = n;
  hp.time_vocab = 7 * 24;
  return hp;
}

DatasetMeta hourly_meta(std::size_t n) { return DatasetMeta{n, 24, 60, 0}; }

Sample random_sample(std::size_t n, std::size_t k, std::mt19937_64& rng,
                     std::size_t time_index = 10) {
  Sample s;
  s.n_regions = n;
  s.k = k;
  s.time_index = time_index;
  s.history_in.resize(n * k);
  s.history_out.resize(n * k);
  s.target_in.resize(n);
  s.target_out.resize(n);
  for (auto* v : {&s.history_in, &s.history_out}) {
    for (real_t& x : *v) x = static_cast<real_t>(canonical_u01(rng));
  }
  for (auto* v : {&s.target_in, &s.target_out}) {
    for (real_t& x : *v) x = static_cast<real_t>(canonical_u01(rng));
  }
  return s;
}

void set_values(Tensor& t, const std::vector<real_t>& v) {
  auto dst = t.values_mut();
  REQUIRE(dst.size() == v.size());
  std::copy(v.begin(), v.end(), dst.begin());
}

void fill(Tensor& t, real_t v) {
  for (real_t& x : t.values_mut()) x = v;
}

}  // namespace

TEST_CASE("hyperparameter defaults match the published configuration") {
  HyperParams hp;
  CHECK(hp.d == 64);
  CHECK(hp.heads == 4);
  CHECK(hp.k == 5);
  CHECK(hp.ff_dim == 128);
  CHECK(hp.n_blocks == 1);
  CHECK(hp.dropout_rate == doctest::Approx(0.1));
  CHECK(hp.attention == AttentionNorm::kSoftmax);
  CHECK(hp.head_mode == HeadMode::kFullDim);
}

TEST_CASE("time vocabulary resolves to a week of slots") {
  DatasetMeta meta{200, 48, 30, 0};
  HyperParams hp;
  hp.resolve(meta);
  CHECK(hp.time_vocab == 336);  // 48 slots/day x 7 days
  CHECK(hp.n_regions == 200);

  meta.start_slot_of_week = 100;
  CHECK(time_of_week_index(meta, 336, 0) == 100);
  CHECK(time_of_week_index(meta, 336, 300) == 64);  // wraps at 336
  CHECK(time_of_week_index(meta, 10, 34) == 4);     // custom vocab: t mod v
}

TEST_CASE("init_params is seed-deterministic with the declared layout") {
  const HyperParams hp = tiny_hp(3);
  ModelParams a = init_params(hp, 5);
  ModelParams b = init_params(hp, 5);
  ModelParams c = init_params(hp, 6);
  auto an = a.named(), bn = b.named(), cn = c.named();
  REQUIRE(an.size() == bn.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < an.size(); ++i) {
    CHECK(an[i].first == bn[i].first);
    const auto av = an[i].second->values();
    const auto bv = bn[i].second->values();
    REQUIRE(av.size() == bv.size());
    for (std::size_t j = 0; j < av.size(); ++j) CHECK(av[j] == bv[j]);
    const auto cv = cn[i].second->values();
    for (std::size_t j = 0; j < av.size(); ++j) {
      any_diff = any_diff || av[j] != cv[j];
    }
  }
  CHECK(any_diff);

  for (const Tensor* bias : {&a.b1, &a.b2, &a.b3, &a.b4, &a.b5, &a.b6, &a.bp1,
                             &a.bp2, &a.blocks[0].bf1, &a.blocks[0].bf2,
                             &a.blocks[0].ln1_beta, &a.blocks[0].ln2_beta}) {
    for (real_t v : bias->values()) CHECK(v == 0.0);
  }
  for (const Tensor* gamma :
       {&a.blocks[0].ln1_gamma, &a.blocks[0].ln2_gamma}) {
    for (real_t v : gamma->values()) CHECK(v == 1.0);
  }

  CHECK(a.w1.shape() == Shape{2, 4});
  CHECK(a.w3.shape() == Shape{8, 4});
  CHECK(a.w4.shape() == Shape{3, 4});
  CHECK(a.w5.shape() == Shape{168, 4});
  CHECK(a.blocks[0].heads.size() == 2);
  CHECK(a.blocks[0].heads[0].wq.shape() == Shape{4, 4});
  CHECK(a.blocks[0].w7.shape() == Shape{8, 4});
  CHECK(a.wp2.shape() == Shape{4, 2});
}

TEST_CASE("init_params weight variance matches the uniform law") {
  HyperParams hp = tiny_hp(3, 64, 2, 2, 8);
  const ModelParams p = init_params(hp, 123);
  const auto v = p.w6.values();  // 64 x 64
  double mean = 0;
  for (real_t x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0;
  for (real_t x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  const double expected = 2.0 / (64.0 + 64.0);
  CHECK(std::abs(var - expected) <= 0.2 * expected);
}

TEST_CASE("embed_flows hand evaluation") {
  HyperParams hp = tiny_hp(1, 4, 1, 1);
  ModelParams p = init_params(hp, 1);

  SUBCASE("zero history with zero biases gives zero output") {
    Tensor hin = Tensor::zeros({1, 1});
    Tensor hout = Tensor::zeros({1, 1});
    const Tensor out = embed_flows(hin, hout, p);
    for (real_t v : out.values()) CHECK(v == 0.0);
  }

  SUBCASE("ones weights with stacked-identity fusion sums the flows") {
    fill(p.w1, 1.0);
    fill(p.w2, 1.0);
    std::vector<real_t> w3(8 * 4, 0.0);  // [2d x d] = [I_d ; I_d]
    for (std::size_t j = 0; j < 4; ++j) {
      w3[j * 4 + j] = 1.0;
      w3[(4 + j) * 4 + j] = 1.0;
    }
    set_values(p.w3, w3);
    const Tensor out = embed_flows(Tensor::matrix(1, 1, {2}),
                                   Tensor::matrix(1, 1, {3}), p);
    CHECK(out.shape() == Shape{1, 4});
    for (real_t v : out.values()) CHECK(v == doctest::Approx(5.0));
  }

  SUBCASE("rejects history not matching k") {
    CHECK_THROWS(embed_flows(Tensor::zeros({1, 3}), Tensor::zeros({1, 3}), p));
  }

  SUBCASE("gradients of all six embedding parameters") {
    std::mt19937_64 rng(2);
    HyperParams hp2 = tiny_hp(3, 4, 1, 2);
    ModelParams p2 = init_params(hp2, 2);
    Tensor hin(Shape{3, 2},
               {0.1, 0.2, 0.3, 0.4, 0.5, 0.6});
    Tensor hout(Shape{3, 2}, {0.6, 0.5, 0.4, 0.3, 0.2, 0.1});
    std::vector<Tensor*> params{&p2.w1, &p2.b1, &p2.w2,
                                &p2.b2, &p2.w3, &p2.b3};
    for (Tensor* t : params) t->zero_grad();
    {
      Tape tape;
      tape.backward(sum_all(embed_flows(hin, hout, p2)));
    }
    const auto f = [&]() {
      return static_cast<double>(sum_all(embed_flows(hin, hout, p2)).at(0));
    };
    const GradCheckReport rep = finite_diff_check(f, params, 1e-6, 16, 3);
    CHECK(rep.finite);
    CHECK(rep.max_rel_err <= 1e-5);
  }
}

TEST_CASE("embed_spatial selects rows of the spatial table") {
  HyperParams hp = tiny_hp(4);
  ModelParams p = init_params(hp, 3);

  const Tensor row1 = embed_spatial(p, 1);
  for (std::size_t j = 0; j < hp.d; ++j) {
    CHECK(row1.values()[j] == p.w4.at(1, j));  // b4 == 0
  }
  const Tensor row2 = embed_spatial(p, 2);
  bool distinct = false;
  for (std::size_t j = 0; j < hp.d; ++j) {
    distinct = distinct || row1.values()[j] != row2.values()[j];
  }
  CHECK(distinct);
  CHECK_THROWS(embed_spatial(p, 4));

  // gradient reaches only the selected row
  p.w4.zero_grad();
  {
    Tape tape;
    tape.backward(sum_all(embed_spatial(p, 1)));
  }
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t j = 0; j < hp.d; ++j) {
      CHECK(p.w4.grad()[r * hp.d + j] == (r == 1 ? 1.0 : 0.0));
    }
  }

  // the all-regions table is exactly the stacked per-region rows
  const Tensor all_rows = spatial_embeddings(p);
  for (std::size_t r = 0; r < 4; ++r) {
    const Tensor one = embed_spatial(p, r);
    for (std::size_t j = 0; j < hp.d; ++j) {
      CHECK(all_rows.at(r, j) == one.values()[j]);
    }
  }
}

TEST_CASE("embed_temporal is periodic over the week") {
  HyperParams hp = tiny_hp(2);
  ModelParams p = init_params(hp, 4);
  const DatasetMeta meta = hourly_meta(2);
  const Tensor a = embed_temporal(p, meta, hp.time_vocab, 12);
  const Tensor b = embed_temporal(p, meta, hp.time_vocab, 12 + 7 * 24);
  for (std::size_t j = 0; j < hp.d; ++j) {
    CHECK(a.values()[j] == b.values()[j]);
  }
  // b5 == 0, so the embedding is a row of w5
  for (std::size_t j = 0; j < hp.d; ++j) {
    CHECK(a.values()[j] == p.w5.at(12, j));
  }
}

TEST_CASE("fuse_region identity and permutation behavior") {
  HyperParams hp = tiny_hp(3);
  ModelParams p = init_params(hp, 5);
  std::mt19937_64 rng(6);

  SUBCASE("identity fusion passes the flow embedding through") {
    std::vector<real_t> eye(hp.d * hp.d, 0);
    for (std::size_t j = 0; j < hp.d; ++j) eye[j * hp.d + j] = 1.0;
    set_values(p.w6, eye);
    std::vector<real_t> fv(3 * hp.d);
    for (real_t& x : fv) x = static_cast<real_t>(canonical_u01(rng));
    const Tensor flows(Shape{3, hp.d}, fv);
    const Tensor out = fuse_region(flows, Tensor::zeros({3, hp.d}),
                                   Tensor::zeros({1, hp.d}), p);
    for (std::size_t i = 0; i < fv.size(); ++i) {
      CHECK(out.values()[i] == fv[i]);
    }
  }

  SUBCASE("all-zero inputs give zero") {
    const Tensor out = fuse_region(Tensor::zeros({3, hp.d}),
                                   Tensor::zeros({3, hp.d}),
                                   Tensor::zeros({1, hp.d}), p);
    for (real_t v : out.values()) CHECK(v == 0.0);
  }

  SUBCASE("permuting flow and spatial rows together permutes the output") {
    std::vector<real_t> fv(3 * hp.d), sv(3 * hp.d), tv(hp.d);
    for (auto* vec : {&fv, &sv}) {
      for (real_t& x : *vec) x = static_cast<real_t>(canonical_u01(rng));
    }
    for (real_t& x : tv) x = static_cast<real_t>(canonical_u01(rng));
    const std::size_t perm[3] = {2, 0, 1};
    std::vector<real_t> pf(3 * hp.d), ps(3 * hp.d);
    for (std::size_t r = 0; r < 3; ++r) {
      for (std::size_t j = 0; j < hp.d; ++j) {
        pf[r * hp.d + j] = fv[perm[r] * hp.d + j];
        ps[r * hp.d + j] = sv[perm[r] * hp.d + j];
      }
    }
    const Tensor base = fuse_region(Tensor(Shape{3, hp.d}, fv),
                                    Tensor(Shape{3, hp.d}, sv),
                                    Tensor(Shape{1, hp.d}, tv), p);
    const Tensor permuted = fuse_region(Tensor(Shape{3, hp.d}, pf),
                                        Tensor(Shape{3, hp.d}, ps),
                                        Tensor(Shape{1, hp.d}, tv), p);
    for (std::size_t r = 0; r < 3; ++r) {
      for (std::size_t j = 0; j < hp.d; ++j) {
        CHECK(permuted.at(r, j) ==
              doctest::Approx(base.at(perm[r], j)).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("attention_scores bilinear hand case") {
  Tensor regions = Tensor::matrix(2, 1, {2, 3});
  Tensor wq = Tensor::matrix(1, 1, {1});
  Tensor wk = Tensor::matrix(1, 1, {1});
  const Tensor scores = attention_scores(regions, wq, wk);  // sqrt(1) = 1
  CHECK(scores.at(0, 0) == doctest::Approx(4.0));
  CHECK(scores.at(0, 1) == doctest::Approx(6.0));
  CHECK(scores.at(1, 0) == doctest::Approx(6.0));
  CHECK(scores.at(1, 1) == doctest::Approx(9.0));

  SUBCASE("zero embeddings give a zero matrix") {
    const Tensor z = attention_scores(Tensor::zeros({3, 1}), wq, wk);
    for (real_t v : z.values()) CHECK(v == 0.0);
  }

  SUBCASE("scaling embeddings by c scales scores by c^2") {
    std::mt19937_64 rng(8);
    std::vector<real_t> rv(4 * 3);
    for (real_t& x : rv) x = static_cast<real_t>(uniform_real(rng, -1, 1));
    Tensor r1(Shape{4, 3}, rv);
    std::vector<real_t> rv2 = rv;
    for (real_t& x : rv2) x *= real_t{2.5};
    Tensor r2(Shape{4, 3}, rv2);
    Tensor q = Tensor(Shape{3, 3}, std::vector<real_t>(9, 0.3));
    Tensor k = Tensor(Shape{3, 3}, std::vector<real_t>(9, -0.2));
    const Tensor s1 = attention_scores(r1, q, k);
    const Tensor s2 = attention_scores(r2, q, k);
    for (std::size_t i = 0; i < s1.size(); ++i) {
      CHECK(s2.values()[i] ==
            doctest::Approx(6.25 * s1.values()[i]).epsilon(1e-9));
    }
  }
}

TEST_CASE("attention_aggregate weight semantics") {
  HyperParams hp = tiny_hp(3, 4);
  ForwardMode eval;

  SUBCASE("all-equal scores average the region embeddings") {
    std::mt19937_64 rng(9);
    std::vector<real_t> rv(3 * 4);
    for (real_t& x : rv) x = static_cast<real_t>(uniform_real(rng, -1, 1));
    const Tensor regions(Shape{3, 4}, rv);
    const Tensor out =
        attention_aggregate(Tensor::full({3, 3}, 0.7), regions, hp, eval);
    for (std::size_t j = 0; j < 4; ++j) {
      const real_t mean = (rv[j] + rv[4 + j] + rv[8 + j]) / real_t{3};
      for (std::size_t i = 0; i < 3; ++i) {
        CHECK(out.at(i, j) == doctest::Approx(mean).epsilon(1e-12));
      }
    }
  }

  SUBCASE("n = 1 returns the single region embedding") {
    const Tensor regions = Tensor::matrix(1, 4, {1, 2, 3, 4});
    const Tensor out =
        attention_aggregate(Tensor::matrix(1, 1, {5}), regions, hp, eval);
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(out.at(0, j) == doctest::Approx(regions.at(0, j)));
    }
  }
}

TEST_CASE("paper-literal attention normalization is available and differentiable") {
  HyperParams hp = tiny_hp(3, 4);
  hp.attention = AttentionNorm::kLiteralRatio;
  ForwardMode eval;
  std::mt19937_64 rng(10);
  std::vector<real_t> sv(9), rv(12);
  for (real_t& x : sv) x = static_cast<real_t>(uniform_real(rng, -1, 1));
  for (real_t& x : rv) x = static_cast<real_t>(uniform_real(rng, -1, 1));
  Tensor scores(Shape{3, 3}, sv, true);
  const Tensor regions(Shape{3, 4}, rv);

  // w[i][j] = s[i][j] / sum_u exp(s[i][u]): rows are NOT stochastic
  const Tensor out = attention_aggregate(scores, regions, hp, eval);
  for (std::size_t i = 0; i < 3; ++i) {
    real_t z = 0;
    for (std::size_t j = 0; j < 3; ++j) z += std::exp(sv[i * 3 + j]);
    for (std::size_t jd = 0; jd < 4; ++jd) {
      real_t expect = 0;
      for (std::size_t j = 0; j < 3; ++j) {
        expect += sv[i * 3 + j] / z * rv[j * 4 + jd];
      }
      CHECK(out.at(i, jd) == doctest::Approx(expect).epsilon(1e-12));
    }
  }

  scores.zero_grad();
  {
    Tape tape;
    tape.backward(sum_all(attention_aggregate(scores, regions, hp, eval)));
  }
  const auto f = [&]() {
    return static_cast<double>(
        sum_all(attention_aggregate(scores, regions, hp, eval)).at(0));
  };
  Tensor* params[] = {&scores};
  const GradCheckReport rep = finite_diff_check(f, params, 1e-6, 9, 12);
  CHECK(rep.finite);
  CHECK(rep.max_rel_err <= 1e-6);
}

TEST_CASE("multi_head_combine") {
  SUBCASE("single head with identity fusion is the identity") {
    std::mt19937_64 rng(11);
    std::vector<real_t> hv(3 * 4);
    for (real_t& x : hv) x = static_cast<real_t>(uniform_real(rng, -1, 1));
    const Tensor head(Shape{3, 4}, hv);
    std::vector<real_t> eye(16, 0);
    for (std::size_t j = 0; j < 4; ++j) eye[j * 4 + j] = 1.0;
    const Tensor out = multi_head_combine({head}, Tensor(Shape{4, 4}, eye));
    for (std::size_t i = 0; i < hv.size(); ++i) {
      CHECK(out.values()[i] == hv[i]);
    }
  }
  SUBCASE("zero head outputs give zero") {
    std::mt19937_64 rng(12);
    std::vector<real_t> wv(8 * 4);
    for (real_t& x : wv) x = static_cast<real_t>(uniform_real(rng, -1, 1));
    const Tensor out = multi_head_combine(
        {Tensor::zeros({3, 4}), Tensor::zeros({3, 4})}, Tensor(Shape{8, 4}, wv));
    for (real_t v : out.values()) CHECK(v == 0.0);
  }
  SUBCASE("head shape mismatch rejected") {
    CHECK_THROWS(multi_head_combine(
        {Tensor::zeros({3, 4}), Tensor::zeros({2, 4})}, Tensor::zeros({8, 4})));
  }
  SUBCASE("fusion weight gradient") {
    std::mt19937_64 rng(13);
    Tensor w7(Shape{8, 4}, std::vector<real_t>(32), true);
    for (real_t& x : w7.values_mut()) {
      x = static_cast<real_t>(uniform_real(rng, -1, 1));
    }
    std::vector<real_t> h1(12), h2(12);
    for (auto* v : {&h1, &h2}) {
      for (real_t& x : *v) x = static_cast<real_t>(uniform_real(rng, -1, 1));
    }
    const Tensor t1(Shape{3, 4}, h1), t2(Shape{3, 4}, h2);
    w7.zero_grad();
    {
      Tape tape;
      tape.backward(sum_all(multi_head_combine({t1, t2}, w7)));
    }
    const auto f = [&]() {
      return static_cast<double>(sum_all(multi_head_combine({t1, t2}, w7)).at(0));
    };
    Tensor* params[] = {&w7};
    const GradCheckReport rep = finite_diff_check(f, params, 1e-6, 16, 14);
    CHECK(rep.max_rel_err <= 1e-6);
  }
}

TEST_CASE("encoder_block is permutation equivariant in eval mode") {
  const std::size_t n = 10, d = 6;
  HyperParams hp = tiny_hp(n, d, 2, 2, 12);
  ModelParams p = init_params(hp, 21);
  ForwardMode eval;
  std::mt19937_64 rng(22);

  std::vector<real_t> rv(n * d);
  for (real_t& x : rv) x = static_cast<real_t>(uniform_real(rng, -1, 1));
  const Tensor regions(Shape{n, d}, rv);
  const Tensor base = encoder_block(regions, p.blocks[0], hp, eval);
  CHECK(base.shape() == Shape{n, d});

  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    shuffle_inplace(perm, rng);
    std::vector<real_t> pv(n * d);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < d; ++j) {
        pv[r * d + j] = rv[perm[r] * d + j];
      }
    }
    const Tensor permuted =
        encoder_block(Tensor(Shape{n, d}, pv), p.blocks[0], hp, eval);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < d; ++j) {
        CHECK(std::abs(permuted.at(r, j) - base.at(perm[r], j)) <= 1e-9);
      }
    }
  }

  // eval mode is bitwise deterministic
  const Tensor again = encoder_block(regions, p.blocks[0], hp, eval);
  for (std::size_t i = 0; i < base.size(); ++i) {
    CHECK(again.values()[i] == base.values()[i]);
  }
}

TEST_CASE("forecast head") {
  HyperParams hp = tiny_hp(3);
  ModelParams p = init_params(hp, 31);

  SUBCASE("zero hidden layer broadcasts the output bias") {
    fill(p.wp1, 0.0);
    set_values(p.bp2, {1.5, -2.5});
    std::mt19937_64 rng(32);
    std::vector<real_t> rv(3 * hp.d);
    for (real_t& x : rv) x = static_cast<real_t>(uniform_real(rng, -1, 1));
    const Tensor out = forecast(Tensor(Shape{3, hp.d}, rv), p);
    CHECK(out.shape() == Shape{3, 2});
    for (std::size_t r = 0; r < 3; ++r) {
      CHECK(out.at(r, 0) == doctest::Approx(1.5));
      CHECK(out.at(r, 1) == doctest::Approx(-2.5));
    }
  }

  SUBCASE("head parameter gradients") {
    std::mt19937_64 rng(33);
    std::vector<real_t> rv(3 * hp.d);
    for (real_t& x : rv) {
      x = static_cast<real_t>(uniform_real(rng, 0.2, 1.0));
    }
    const Tensor regions(Shape{3, hp.d}, rv);
    std::vector<Tensor*> params{&p.wp1, &p.bp1, &p.wp2, &p.bp2};
    for (Tensor* t : params) t->zero_grad();
    {
      Tape tape;
      tape.backward(sum_all(square(forecast(regions, p))));
    }
    const auto f = [&]() {
      return static_cast<double>(sum_all(square(forecast(regions, p))).at(0));
    };
    const GradCheckReport rep = finite_diff_check(f, params, 1e-6, 12, 34);
    CHECK(rep.max_rel_err <= 1e-5);
  }
}

TEST_CASE("forward_batch with B = 1 equals the unbatched composition bitwise") {
  HyperParams hp = tiny_hp(3);
  ModelParams p = init_params(hp, 41);
  const DatasetMeta meta = hourly_meta(3);
  std::mt19937_64 rng(42);
  const Sample s = random_sample(3, hp.k, rng);
  ForwardMode eval;
  const Tensor single = forward_sample(p, hp, meta, s, eval);
  const Sample batch[] = {s};
  const Tensor batched = forward_batch(p, hp, meta, batch, eval);
  CHECK(batched.shape() == Shape{1, 3, 2});
  for (std::size_t i = 0; i < single.size(); ++i) {
    CHECK(batched.values()[i] == single.values()[i]);
  }

  // eval-mode forward is a pure function
  const Tensor repeat = forward_sample(p, hp, meta, s, eval);
  for (std::size_t i = 0; i < single.size(); ++i) {
    CHECK(repeat.values()[i] == single.values()[i]);
  }
}

TEST_CASE("full-graph gradients match finite differences on a tiny config") {
  for (std::size_t blocks : {std::size_t{1}, std::size_t{2}, std::size_t{3}}) {
    HyperParams hp = tiny_hp(3, 4, 2, 2, 8, blocks);
    ModelParams p = init_params(hp, 51);
    const DatasetMeta meta = hourly_meta(3);
    std::mt19937_64 rng(52 + blocks);
    const std::vector<Sample> samples{random_sample(3, hp.k, rng, 7),
                                      random_sample(3, hp.k, rng, 20)};

    auto build = [&]() -> Tensor {
      ForwardMode eval;
      const Tensor pred = forward_batch(p, hp, meta, samples, eval);
      std::vector<real_t> tv;
      for (const Sample& s : samples) {
        for (std::size_t r = 0; r < 3; ++r) {
          tv.push_back(s.target_in[r]);
          tv.push_back(s.target_out[r]);
        }
      }
      return loss_joint_rmse(pred, Tensor(Shape{samples.size(), 3, 2}, tv));
    };

    auto params = p.tensors();
    p.zero_grads();
    {
      Tape tape;
      tape.backward(build());
    }
    const auto f = [&]() { return static_cast<double>(build().at(0)); };
    const GradCheckReport rep =
        finite_diff_check(f, params, 1e-6, 8, 53 + blocks);
    CHECK(rep.finite);
    CHECK(rep.max_rel_err <= 1e-4);
  }
}

TEST_CASE("split head mode produces the conventional dimensions") {
  HyperParams hp = tiny_hp(3, 8, 2, 2, 8);
  hp.head_mode = HeadMode::kSplitDim;
  CHECK(hp.head_dim() == 4);
  ModelParams p = init_params(hp, 61);
  CHECK(p.blocks[0].heads[0].wq.shape() == Shape{8, 4});
  CHECK(p.blocks[0].w7.shape() == Shape{16, 8});  // heads x d, unprojected values

  const DatasetMeta meta = hourly_meta(3);
  std::mt19937_64 rng(62);
  const Sample s = random_sample(3, hp.k, rng);
  ForwardMode eval;
  const Tensor out = forward_sample(p, hp, meta, s, eval);
  CHECK(out.shape() == Shape{3, 2});

  hp.d = 7;  // not divisible by heads
  CHECK_THROWS(init_params(hp, 63));
}

TEST_CASE("training-mode forward applies dropout but eval does not") {
  HyperParams hp = tiny_hp(3);
  hp.dropout_rate = 0.5;
  ModelParams p = init_params(hp, 71);
  const DatasetMeta meta = hourly_meta(3);
  std::mt19937_64 rng(72);
  const Sample s = random_sample(3, hp.k, rng);

  ForwardMode eval;
  const Tensor e1 = forward_sample(p, hp, meta, s, eval);
  const Tensor e2 = forward_sample(p, hp, meta, s, eval);
  for (std::size_t i = 0; i < e1.size(); ++i) {
    CHECK(e1.values()[i] == e2.values()[i]);
  }

  std::mt19937_64 d1(5), d2(5), d3(6);
  ForwardMode m1{true, &d1}, m2{true, &d2}, m3{true, &d3};
  const Tensor t1 = forward_sample(p, hp, meta, s, m1);
  const Tensor t2 = forward_sample(p, hp, meta, s, m2);
  const Tensor t3 = forward_sample(p, hp, meta, s, m3);
  bool same_seed_same = true, diff_seed_diff = false;
  for (std::size_t i = 0; i < t1.size(); ++i) {
    same_seed_same = same_seed_same && t1.values()[i] == t2.values()[i];
    diff_seed_diff = diff_seed_diff || t1.values()[i] != t3.values()[i];
  }
  CHECK(same_seed_same);
  CHECK(diff_seed_diff);
}
