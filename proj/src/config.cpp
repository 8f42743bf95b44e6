#include "stsam/config.hpp"

#include <array>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "stsam/errors.hpp"

namespace stsam {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::size_t to_size(const std::string& v, const std::string& key) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw DataError("config: invalid integer for " + key + ": `" + v + "`");
  }
  return out;
}

long long to_ll(const std::string& v, const std::string& key) {
  long long out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw DataError("config: invalid integer for " + key + ": `" + v + "`");
  }
  return out;
}

real_t to_real(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return static_cast<real_t>(d);
  } catch (const std::exception&) {
    throw DataError("config: invalid number for " + key + ": `" + v + "`");
  }
}

bool to_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw DataError("config: invalid boolean for " + key + ": `" + v + "`");
}

std::string real_str(real_t v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", static_cast<double>(v));
  return buf;
}

void apply_key(RunConfig& cfg, const std::string& key,
               const std::string& value) {
  if (key == "data.csv") cfg.data_csv = value;
  else if (key == "data.meta") cfg.meta_path = value;
  else if (key == "out.dir") cfg.output_dir = value;
  else if (key == "out.checkpoint") cfg.checkpoint_path = value;
  else if (key == "model.d") cfg.hp.d = to_size(value, key);
  else if (key == "model.heads") cfg.hp.heads = to_size(value, key);
  else if (key == "model.k") cfg.hp.k = to_size(value, key);
  else if (key == "model.ff_dim") cfg.hp.ff_dim = to_size(value, key);
  else if (key == "model.n_blocks") cfg.hp.n_blocks = to_size(value, key);
  else if (key == "model.dropout") cfg.hp.dropout_rate = to_real(value, key);
  else if (key == "model.time_vocab") cfg.hp.time_vocab = to_size(value, key);
  else if (key == "model.attention") {
    if (value == "softmax") cfg.hp.attention = AttentionNorm::kSoftmax;
    else if (value == "literal") cfg.hp.attention = AttentionNorm::kLiteralRatio;
    else throw DataError("config: model.attention must be softmax|literal");
  } else if (key == "model.head_mode") {
    if (value == "full") cfg.hp.head_mode = HeadMode::kFullDim;
    else if (value == "split") cfg.hp.head_mode = HeadMode::kSplitDim;
    else throw DataError("config: model.head_mode must be full|split");
  } else if (key == "model.ln_eps") cfg.hp.ln_eps = to_real(value, key);
  else if (key == "train.lr") cfg.train.learning_rate = to_real(value, key);
  else if (key == "train.batch_size") cfg.train.batch_size = to_size(value, key);
  else if (key == "train.max_epochs") cfg.train.max_epochs = to_size(value, key);
  else if (key == "train.patience") cfg.train.patience = to_size(value, key);
  else if (key == "split.train_days") cfg.train_days = to_size(value, key);
  else if (key == "split.val_fraction") cfg.val_fraction = to_real(value, key);
  else if (key == "split.disallow_overlap") cfg.disallow_overlap = to_bool(value, key);
  else if (key == "normalize") cfg.normalize = to_bool(value, key);
  else if (key == "eval.mape_threshold") cfg.mape_threshold = to_real(value, key);
  else if (key == "eval.partition") {
    if (value != "train" && value != "val" && value != "test") {
      throw DataError("config: eval.partition must be train|val|test");
    }
    cfg.eval_partition = value;
  } else if (key == "predict.t") cfg.predict_t = to_ll(value, key);
  else if (key == "seed") {
    cfg.seed = to_size(value, key);
    cfg.train.seed = cfg.seed;
    cfg.synth.seed = cfg.seed;
  } else if (key == "synth.regions") {
    cfg.synth.n_regions = to_size(value, key);
    cfg.synth_configured = true;
  } else if (key == "synth.days") {
    cfg.synth.days = to_size(value, key);
    cfg.synth_configured = true;
  } else if (key == "synth.slots_per_day") {
    cfg.synth.slots_per_day = to_size(value, key);
    cfg.synth_configured = true;
  } else if (key == "synth.base_level") {
    cfg.synth.base_level = to_real(value, key);
    cfg.synth_configured = true;
  } else if (key == "synth.daily_amplitude") {
    cfg.synth.daily_amplitude = to_real(value, key);
    cfg.synth_configured = true;
  } else if (key == "synth.noise_std") {
    cfg.synth.noise_std = to_real(value, key);
    cfg.synth_configured = true;
  } else if (key == "synth.lag_edges") {
    cfg.synth.lag_edges = parse_lag_edges(value);
    cfg.synth_configured = true;
  } else {
    throw DataError("config: unknown key `" + key + "`");
  }
}

void apply_line(RunConfig& cfg, const std::string& line,
                const std::string& where) {
  const auto eq = line.find('=');
  if (eq == std::string::npos) {
    throw DataError(where + ": expected `key = value`, got `" + line + "`");
  }
  apply_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
}

}  // namespace

std::string RunConfig::resolved_checkpoint() const {
  if (!checkpoint_path.empty()) return checkpoint_path;
  return output_dir + "/model.ckpt";
}

std::vector<LagEdge> parse_lag_edges(const std::string& text) {
  std::vector<LagEdge> edges;
  std::istringstream in(text);
  std::string term;
  while (in >> term) {
    LagEdge e;
    std::array<std::string, 4> fields;
    std::size_t field = 0, start = 0;
    for (std::size_t i = 0; i <= term.size(); ++i) {
      if (i == term.size() || term[i] == ':') {
        if (field >= 4) throw DataError("config: bad lag edge `" + term + "`");
        fields[field++] = term.substr(start, i - start);
        start = i + 1;
      }
    }
    if (field != 4) {
      throw DataError("config: lag edge `" + term +
                      "` must be src:dst:lag:weight");
    }
    e.src = to_size(fields[0], "lag edge src");
    e.dst = to_size(fields[1], "lag edge dst");
    e.lag = to_size(fields[2], "lag edge lag");
    e.weight = to_real(fields[3], "lag edge weight");
    edges.push_back(e);
  }
  return edges;
}

std::string format_lag_edges(const std::vector<LagEdge>& edges) {
  std::ostringstream os;
  for (std::size_t i = 0; i < edges.size(); ++i) {
    if (i) os << ' ';
    os << edges[i].src << ':' << edges[i].dst << ':' << edges[i].lag << ':'
       << real_str(edges[i].weight);
  }
  return os.str();
}

RunConfig parse_run_config(const std::string& path,
                           const std::vector<std::string>& overrides) {
  RunConfig cfg;
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    apply_line(cfg, t, path + ":" + std::to_string(lineno));
  }
  for (const std::string& o : overrides) apply_line(cfg, o, "--set " + o);
  return cfg;
}

RunConfig parse_run_config_values(const std::vector<std::string>& overrides) {
  RunConfig cfg;
  for (const std::string& o : overrides) apply_line(cfg, o, "--set " + o);
  return cfg;
}

std::string dump_run_config(const RunConfig& c) {
  std::ostringstream os;
  os << "data.csv = " << c.data_csv << "\n";
  os << "data.meta = " << c.meta_path << "\n";
  os << "out.dir = " << c.output_dir << "\n";
  os << "out.checkpoint = " << c.checkpoint_path << "\n";
  os << "model.d = " << c.hp.d << "\n";
  os << "model.heads = " << c.hp.heads << "\n";
  os << "model.k = " << c.hp.k << "\n";
  os << "model.ff_dim = " << c.hp.ff_dim << "\n";
  os << "model.n_blocks = " << c.hp.n_blocks << "\n";
  os << "model.dropout = " << real_str(c.hp.dropout_rate) << "\n";
  os << "model.time_vocab = " << c.hp.time_vocab << "\n";
  os << "model.attention = "
     << (c.hp.attention == AttentionNorm::kSoftmax ? "softmax" : "literal")
     << "\n";
  os << "model.head_mode = "
     << (c.hp.head_mode == HeadMode::kFullDim ? "full" : "split") << "\n";
  os << "model.ln_eps = " << real_str(c.hp.ln_eps) << "\n";
  os << "train.lr = " << real_str(c.train.learning_rate) << "\n";
  os << "train.batch_size = " << c.train.batch_size << "\n";
  os << "train.max_epochs = " << c.train.max_epochs << "\n";
  os << "train.patience = " << c.train.patience << "\n";
  os << "split.train_days = " << c.train_days << "\n";
  os << "split.val_fraction = " << real_str(c.val_fraction) << "\n";
  os << "split.disallow_overlap = " << (c.disallow_overlap ? "true" : "false")
     << "\n";
  os << "normalize = " << (c.normalize ? "true" : "false") << "\n";
  os << "eval.mape_threshold = " << real_str(c.mape_threshold) << "\n";
  os << "eval.partition = " << c.eval_partition << "\n";
  os << "predict.t = " << c.predict_t << "\n";
  os << "synth.regions = " << c.synth.n_regions << "\n";
  os << "synth.days = " << c.synth.days << "\n";
  os << "synth.slots_per_day = " << c.synth.slots_per_day << "\n";
  os << "synth.base_level = " << real_str(c.synth.base_level) << "\n";
  os << "synth.daily_amplitude = " << real_str(c.synth.daily_amplitude) << "\n";
  os << "synth.noise_std = " << real_str(c.synth.noise_std) << "\n";
  os << "synth.lag_edges = " << format_lag_edges(c.synth.lag_edges) << "\n";
  os << "seed = " << c.seed << "\n";
  return os.str();
}

std::string config_hash(const RunConfig& config) {
  const std::string dump = dump_run_config(config);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : dump) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace stsam
