#include "mqtts/config.hpp"

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <vector>

#include "mqtts/error.hpp"

namespace mqtts {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

long long parse_ll(const std::string& key, const std::string& v) {
  long long x = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size())
    fail(ErrorKind::config, "config: bad integer for " + key + ": '" + v + "'");
  return x;
}

double parse_d(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    fail(ErrorKind::config, "config: bad number for " + key + ": '" + v + "'");
  }
}

bool parse_b(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail(ErrorKind::config, "config: bad boolean for " + key + ": '" + v + "'");
}

std::string fmt_ll(long long x) { return std::to_string(x); }

std::string fmt_d(double x) {
  char buf[40];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  (void)ec;
  return std::string(buf, p);
}

struct KeyEntry {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <class Ref>
KeyEntry int_key(const std::string& key, Ref ref) {
  return {key,
          [ref](const RunConfig& c) { return fmt_ll(ref(const_cast<RunConfig&>(c))); },
          [key, ref](RunConfig& c, const std::string& v) {
            ref(c) = static_cast<std::remove_reference_t<decltype(ref(c))>>(parse_ll(key, v));
          }};
}

template <class Ref>
KeyEntry dbl_key(const std::string& key, Ref ref) {
  return {key,
          [ref](const RunConfig& c) { return fmt_d(ref(const_cast<RunConfig&>(c))); },
          [key, ref](RunConfig& c, const std::string& v) { ref(c) = parse_d(key, v); }};
}

template <class Ref>
KeyEntry bool_key(const std::string& key, Ref ref) {
  return {key,
          [ref](const RunConfig& c) { return ref(const_cast<RunConfig&>(c)) ? "true" : "false"; },
          [key, ref](RunConfig& c, const std::string& v) { ref(c) = parse_b(key, v); }};
}

const std::vector<KeyEntry>& key_table() {
  static const std::vector<KeyEntry> table = [] {
    std::vector<KeyEntry> t;
    auto I = [&t](const std::string& k, auto ref) { t.push_back(int_key(k, ref)); };
    auto D = [&t](const std::string& k, auto ref) { t.push_back(dbl_key(k, ref)); };
    auto B = [&t](const std::string& k, auto ref) { t.push_back(bool_key(k, ref)); };

    I("quantizer.groups", [](RunConfig& c) -> Index& { return c.quantizer.groups; });
    I("quantizer.codes", [](RunConfig& c) -> Index& { return c.quantizer.codes; });
    I("quantizer.latent_dim", [](RunConfig& c) -> Index& { return c.quantizer.latent_dim; });
    D("quantizer.gamma", [](RunConfig& c) -> double& { return c.quantizer.gamma; });
    D("quantizer.lambda", [](RunConfig& c) -> double& { return c.quantizer.lambda; });
    I("quantizer.hop", [](RunConfig& c) -> Index& { return c.quantizer.hop; });
    I("quantizer.sample_rate", [](RunConfig& c) -> int& { return c.quantizer.sample_rate; });
    I("quantizer.channels", [](RunConfig& c) -> Index& { return c.quantizer.channels; });
    I("quantizer.gn_channels_per_group",
      [](RunConfig& c) -> Index& { return c.quantizer.gn_channels_per_group; });

    I("synthesizer.layers_enc", [](RunConfig& c) -> Index& { return c.synthesizer.layers_enc; });
    I("synthesizer.layers_dec", [](RunConfig& c) -> Index& { return c.synthesizer.layers_dec; });
    I("synthesizer.model_dim", [](RunConfig& c) -> Index& { return c.synthesizer.model_dim; });
    I("synthesizer.heads", [](RunConfig& c) -> Index& { return c.synthesizer.heads; });
    I("synthesizer.dim_ff", [](RunConfig& c) -> Index& { return c.synthesizer.dim_ff; });
    I("synthesizer.subdecoder_layers",
      [](RunConfig& c) -> Index& { return c.synthesizer.subdecoder_layers; });
    I("synthesizer.groups", [](RunConfig& c) -> Index& { return c.synthesizer.groups; });
    I("synthesizer.codes", [](RunConfig& c) -> Index& { return c.synthesizer.codes; });
    I("synthesizer.phonemes", [](RunConfig& c) -> Index& { return c.synthesizer.phonemes; });
    B("synthesizer.use_subdecoder",
      [](RunConfig& c) -> bool& { return c.synthesizer.use_subdecoder; });
    B("synthesizer.use_alibi", [](RunConfig& c) -> bool& { return c.synthesizer.use_alibi; });

    D("synthesis.top_p", [](RunConfig& c) -> double& { return c.synthesis.top_p; });
    I("synthesis.window", [](RunConfig& c) -> Index& { return c.synthesis.window; });
    D("synthesis.prompt_sigma", [](RunConfig& c) -> double& { return c.synthesis.prompt_sigma; });
    I("synthesis.max_frames", [](RunConfig& c) -> Index& { return c.synthesis.max_frames; });
    I("synthesis.seed", [](RunConfig& c) -> std::uint64_t& { return c.synthesis.seed; });

    I("corpus.utterances", [](RunConfig& c) -> Index& { return c.corpus.utterances; });
    I("corpus.phonemes", [](RunConfig& c) -> Index& { return c.corpus.phonemes; });
    I("corpus.speakers", [](RunConfig& c) -> Index& { return c.corpus.speakers; });
    I("corpus.min_phones", [](RunConfig& c) -> Index& { return c.corpus.min_phones; });
    I("corpus.max_phones", [](RunConfig& c) -> Index& { return c.corpus.max_phones; });
    I("corpus.min_dwell", [](RunConfig& c) -> Index& { return c.corpus.min_dwell; });
    I("corpus.max_dwell", [](RunConfig& c) -> Index& { return c.corpus.max_dwell; });
    D("corpus.noise_min", [](RunConfig& c) -> double& { return c.corpus.noise_min; });
    D("corpus.noise_max", [](RunConfig& c) -> double& { return c.corpus.noise_max; });
    I("corpus.hop", [](RunConfig& c) -> Index& { return c.corpus.hop; });
    I("corpus.sample_rate", [](RunConfig& c) -> int& { return c.corpus.sample_rate; });
    I("corpus.seed", [](RunConfig& c) -> std::uint64_t& { return c.corpus.seed; });

    I("stage1.steps", [](RunConfig& c) -> Index& { return c.stage1.steps; });
    I("stage1.batch_frames", [](RunConfig& c) -> Index& { return c.stage1.batch_frames; });
    D("stage1.lr", [](RunConfig& c) -> double& { return c.stage1.lr; });
    D("stage1.beta1", [](RunConfig& c) -> double& { return c.stage1.beta1; });
    D("stage1.beta2", [](RunConfig& c) -> double& { return c.stage1.beta2; });
    I("stage1.log_every", [](RunConfig& c) -> Index& { return c.stage1.log_every; });
    I("stage1.seed", [](RunConfig& c) -> std::uint64_t& { return c.stage1.seed; });
    B("stage1.kmeans_init", [](RunConfig& c) -> bool& { return c.stage1.kmeans_init; });
    I("stage1.reseed_every", [](RunConfig& c) -> Index& { return c.stage1.reseed_every; });

    I("stage2.steps", [](RunConfig& c) -> Index& { return c.stage2.steps; });
    I("stage2.batch_frames", [](RunConfig& c) -> Index& { return c.stage2.batch_frames; });
    D("stage2.lr", [](RunConfig& c) -> double& { return c.stage2.lr; });
    D("stage2.beta1", [](RunConfig& c) -> double& { return c.stage2.beta1; });
    D("stage2.beta2", [](RunConfig& c) -> double& { return c.stage2.beta2; });
    I("stage2.log_every", [](RunConfig& c) -> Index& { return c.stage2.log_every; });
    I("stage2.seed", [](RunConfig& c) -> std::uint64_t& { return c.stage2.seed; });
    return t;
  }();
  return table;
}

const KeyEntry* find_key(const std::string& key) {
  for (const KeyEntry& e : key_table())
    if (e.key == key) return &e;
  return nullptr;
}

}  // namespace

void TrainStageConfig::validate() const {
  if (steps < 1) fail(ErrorKind::config, "training: steps must be positive");
  if (batch_frames < 1) fail(ErrorKind::config, "training: batch_frames must be positive");
  if (!(lr > 0.0)) fail(ErrorKind::config, "training: lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    fail(ErrorKind::config, "training: betas must lie in [0, 1)");
  if (log_every < 1) fail(ErrorKind::config, "training: log_every must be positive");
  if (reseed_every < 0) fail(ErrorKind::config, "training: reseed_every must be >= 0");
}

void RunConfig::validate() const {
  quantizer.validate();
  synthesizer.validate();
  synthesis.validate();
  corpus.validate();
  stage1.validate();
  stage2.validate();
  if (quantizer.groups != synthesizer.groups || quantizer.codes != synthesizer.codes)
    fail(ErrorKind::config, "config: quantizer and synthesizer disagree on the code space");
  if (corpus.hop != quantizer.hop)
    fail(ErrorKind::config, "config: corpus hop does not match the quantizer");
  if (corpus.sample_rate != quantizer.sample_rate)
    fail(ErrorKind::config, "config: corpus sample rate does not match the quantizer");
  if (corpus.phonemes != synthesizer.phonemes)
    fail(ErrorKind::config, "config: corpus phoneme inventory does not match the synthesizer");
}

RunConfig default_run_config() {
  RunConfig c;
  c.stage1.steps = 2000;
  c.stage1.beta1 = 0.5;
  c.stage1.beta2 = 0.9;
  c.stage1.kmeans_init = true;
  c.stage1.reseed_every = 200;
  c.stage2.steps = 800;
  c.stage2.beta1 = 0.9;
  c.stage2.beta2 = 0.98;
  return c;
}

std::string write_config_text(const RunConfig& cfg) {
  std::ostringstream out;
  out << "config_version = 1\n";
  for (const KeyEntry& e : key_table()) out << e.key << " = " << e.get(cfg) << "\n";
  return out.str();
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg = default_run_config();
  std::istringstream in(text);
  std::string line;
  std::set<std::string> seen;
  bool versioned = false;
  while (std::getline(in, line)) {
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      fail(ErrorKind::config, "config: expected 'key = value', got '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) fail(ErrorKind::config, "config: duplicate key " + key);
    if (key == "config_version") {
      if (parse_ll(key, val) != 1) fail(ErrorKind::config, "config: unsupported config_version " + val);
      versioned = true;
      continue;
    }
    const KeyEntry* e = find_key(key);
    if (!e) fail(ErrorKind::config, "config: unknown key " + key);
    e->set(cfg, val);
  }
  if (!versioned) fail(ErrorKind::config, "config: missing config_version");
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "config: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

void save_config(const std::string& path, const RunConfig& cfg) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::io, "config: cannot open " + path + " for writing");
  out << write_config_text(cfg);
  if (!out) fail(ErrorKind::io, "config: write failed for " + path);
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  std::size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    fail(ErrorKind::config, "config: override must look like key=value, got '" + assignment + "'");
  std::string key = trim(assignment.substr(0, eq));
  std::string val = trim(assignment.substr(eq + 1));
  const KeyEntry* e = find_key(key);
  if (!e) fail(ErrorKind::config, "config: unknown key " + key);
  e->set(cfg, val);
}

}  // namespace mqtts
