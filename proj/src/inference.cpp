#include "mqtts/inference.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mqtts/error.hpp"
#include "mqtts/kernels.hpp"

namespace mqtts {

namespace {

// Decimal probability literals land a few ulp away from the intended
// value ({0.5, 0.3} sums just under 0.8), so the cumulative cut gets a
// hair of slack rather than an exact comparison.
constexpr double kCutSlack = 1e-9;

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double x : p)
    if (x > 0.0) h -= x * std::log(x);
  return h;
}

}  // namespace

void SynthesisConfig::validate() const {
  if (!(top_p > 0.0) || !(top_p <= 1.0))
    fail(ErrorKind::config, "synthesis: top_p must be in (0, 1]");
  if (window < 1) fail(ErrorKind::config, "synthesis: window must be at least 1");
  if (!(prompt_sigma >= 0.0)) fail(ErrorKind::config, "synthesis: prompt_sigma must be >= 0");
  if (max_frames < 1) fail(ErrorKind::config, "synthesis: max_frames must be at least 1");
}

std::vector<std::pair<Index, double>> nucleus_candidates(std::span<const double> dist, double p) {
  if (dist.empty()) fail(ErrorKind::input, "nucleus: empty distribution");
  if (!(p > 0.0) || !(p <= 1.0)) fail(ErrorKind::input, "nucleus: p must be in (0, 1]");
  double sum = 0.0;
  for (double x : dist) {
    if (!std::isfinite(x) || x < 0.0)
      fail(ErrorKind::input, "nucleus: distribution entries must be finite and non-negative");
    sum += x;
  }
  if (std::fabs(sum - 1.0) > 1e-6) fail(ErrorKind::input, "nucleus: distribution does not sum to 1");

  std::vector<Index> order(dist.size());
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return dist[static_cast<std::size_t>(a)] > dist[static_cast<std::size_t>(b)];
  });

  std::vector<std::pair<Index, double>> kept;
  double cum = 0.0;
  for (Index idx : order) {
    cum += dist[static_cast<std::size_t>(idx)];
    kept.emplace_back(idx, 0.0);
    if (cum >= p - kCutSlack) break;
  }
  for (std::size_t i = 0; i < kept.size(); ++i)
    kept[i].second = dist[static_cast<std::size_t>(kept[i].first)] / cum;
  return kept;
}

Index nucleus_sample(std::span<const double> dist, double p, Rng& rng) {
  std::vector<std::pair<Index, double>> cand = nucleus_candidates(dist, p);
  double u = rng.uniform();
  double cum = 0.0;
  for (const auto& [idx, q] : cand) {
    cum += q;
    if (u < cum) return idx;
  }
  return cand.back().first;
}

std::vector<double> window_softmax(std::span<const double> logits) {
  if (logits.empty()) fail(ErrorKind::input, "window_softmax: empty window");
  for (double x : logits)
    if (!std::isfinite(x)) fail(ErrorKind::input, "window_softmax: non-finite logit");
  std::vector<double> w(logits.size());
  kernels::softmax_rows(logits.data(), 1, static_cast<Index>(logits.size()), w.data());
  return w;
}

AlignmentState advance_alignment(std::span<const double> window_logits, const AlignmentState& st) {
  if (st.enc_len < 1 || st.window < 1 || st.b < 0 || st.b > st.enc_len - 1)
    fail(ErrorKind::contract, "alignment: invalid state");
  if (static_cast<Index>(window_logits.size()) != st.win_hi() - st.win_lo() + 1)
    fail(ErrorKind::dimension, "alignment: logit span does not match the window");
  std::vector<double> w = window_softmax(window_logits);
  AlignmentState next = st;
  next.step = st.step + 1;
  if (w.front() < 1.0 / static_cast<double>(st.window) && st.b < st.enc_len - 1) next.b = st.b + 1;
  return next;
}

bool alignment_complete(std::span<const double> logits_full, const AlignmentState& st) {
  if (st.enc_len < 1 || st.window < 1)
    fail(ErrorKind::contract, "alignment: invalid state");
  if (static_cast<Index>(logits_full.size()) != st.enc_len)
    fail(ErrorKind::dimension, "alignment: expected scores for every encoder position");
  if (st.b != st.enc_len - 1) return false;
  Index lo = st.enc_len - st.window > 0 ? st.enc_len - st.window : 0;
  std::vector<double> w = window_softmax(logits_full.subspan(static_cast<std::size_t>(lo)));
  return w.back() < 1.0 / static_cast<double>(st.window);
}

SynthesisResult synthesize(const Quantizer& q, const Synthesizer& s,
                           std::span<const std::int32_t> phonemes,
                           std::span<const double> speaker, const SynthesisConfig& cfg) {
  cfg.validate();
  const QuantizerConfig& qc = q.config();
  const SynthesizerConfig& sc = s.config();
  if (qc.groups != sc.groups || qc.codes != sc.codes)
    fail(ErrorKind::dimension, "synthesize: quantizer and synthesizer disagree on the code space");

  const Index n = sc.groups;
  const std::int32_t rep = rep_token(sc.codes);
  const std::int32_t start = start_token(sc.codes);

  Mat enc = s.encode_phonemes(phonemes);
  Mat spk = s.process_speaker(speaker);
  const Index enc_len = enc.rows;

  CodeGrid prompt = silence_prompt(q, cfg.prompt_sigma, cfg.seed);
  Rng rng = Rng(cfg.seed).fork(1);  // stream 1: sampling (the prompt owns the base stream)

  // forced rows: the start-of-stream row, then the prompt frames with
  // repetition replacement exactly as the training streams encode them
  std::vector<std::vector<std::int32_t>> forced;
  forced.emplace_back(static_cast<std::size_t>(n), start);
  for (Index f = 0; f < prompt.t; ++f) {
    std::vector<std::int32_t> row(static_cast<std::size_t>(n));
    for (Index g = 0; g < n; ++g) {
      bool repeat = f > 0 && prompt.at(f, g) == prompt.at(f - 1, g);
      row[static_cast<std::size_t>(g)] = repeat ? rep : prompt.at(f, g);
    }
    forced.push_back(std::move(row));
  }

  DecoderState state =
      s.begin_stream(std::move(enc), std::move(spk), prompt.t + cfg.max_frames + 2);
  AlignmentState al{0, cfg.window, enc_len, 0};

  SynthesisResult res;
  res.diag.prompt_frames = prompt.t;
  res.diag.enc_len = enc_len;

  std::vector<std::int32_t> prev_codes(static_cast<std::size_t>(n));
  for (Index g = 0; g < n; ++g) prev_codes[static_cast<std::size_t>(g)] = prompt.at(prompt.t - 1, g);

  std::vector<std::vector<std::int32_t>> frames;
  std::vector<std::int32_t> next_row = forced.front();
  std::size_t forced_idx = 1;

  while (true) {
    Index lo = al.win_lo();
    Index hi = al.win_hi();
    Mat o = s.decoder_step(next_row, state, lo, hi);

    res.diag.alignment_path.push_back(al.b);
    std::span<const double> weights(state.cross_weights);
    res.diag.attn_entropy.push_back(
        entropy(weights.subspan(static_cast<std::size_t>(lo), static_cast<std::size_t>(hi - lo + 1))));

    std::span<const double> logits(state.cross_logits);
    const bool at_end = al.b == enc_len - 1;  // this step attended from the last position
    al = advance_alignment(
        logits.subspan(static_cast<std::size_t>(lo), static_cast<std::size_t>(hi - lo + 1)), al);

    if (forced_idx < forced.size()) {
      next_row = forced[forced_idx++];
      continue;
    }

    // stopping by alignment is tested before sampling: once attention has
    // left the last phoneme the next frame would lie past the text
    if (at_end && alignment_complete(logits, al)) {
      res.diag.ended_by_alignment = true;
      break;
    }

    std::vector<std::int32_t> ext;
    ext.reserve(static_cast<std::size_t>(n));
    double tok_h = 0.0;
    bool framing = false;
    for (Index g = 0; g < n; ++g) {
      std::vector<double> dist = s.group_distribution(o, ext, g);
      tok_h += entropy(dist);
      Index tok = nucleus_sample(dist, cfg.top_p, rng);
      if (tok >= start) {  // START or END: the stream is over either way
        framing = true;
        break;
      }
      ext.push_back(static_cast<std::int32_t>(tok));
    }
    if (framing) {
      res.diag.ended_by_token = true;
      break;
    }

    std::vector<std::int32_t> codes(static_cast<std::size_t>(n));
    for (Index g = 0; g < n; ++g) {
      std::int32_t t = ext[static_cast<std::size_t>(g)];
      codes[static_cast<std::size_t>(g)] = t == rep ? prev_codes[static_cast<std::size_t>(g)] : t;
      prev_codes[static_cast<std::size_t>(g)] = codes[static_cast<std::size_t>(g)];
    }
    frames.push_back(std::move(codes));
    res.diag.token_entropy.push_back(tok_h / static_cast<double>(n));
    for (std::int32_t t : ext) res.diag.sampled_tokens.push_back(t);

    if (static_cast<Index>(frames.size()) >= cfg.max_frames) {
      res.diag.truncated = true;
      break;
    }
    next_row = std::move(ext);
  }

  res.codes.t = static_cast<Index>(frames.size());
  res.codes.n = n;
  res.codes.k = qc.codes;
  res.codes.codes.reserve(frames.size() * static_cast<std::size_t>(n));
  for (const auto& row : frames)
    res.codes.codes.insert(res.codes.codes.end(), row.begin(), row.end());

  if (res.codes.t > 0) {
    res.wave = q.decode(res.codes, speaker);
  } else {
    res.wave.sample_rate = qc.sample_rate;
  }
  return res;
}

void write_diagnostics(const std::string& path, const SynthesisDiagnostics& d) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::io, "diagnostics: cannot open " + path + " for writing");
  char buf[64];
  auto num = [&](double x) {
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return std::string(buf);
  };
  std::size_t groups =
      d.token_entropy.empty() ? 0 : d.sampled_tokens.size() / d.token_entropy.size();
  out << "mqtts-diagnostics 1\n";
  out << "enc_len " << d.enc_len << "\n";
  out << "prompt_frames " << d.prompt_frames << "\n";
  out << "groups " << groups << "\n";
  out << "truncated " << (d.truncated ? 1 : 0) << "\n";
  out << "ended_by_token " << (d.ended_by_token ? 1 : 0) << "\n";
  out << "ended_by_alignment " << (d.ended_by_alignment ? 1 : 0) << "\n";
  out << "steps " << d.alignment_path.size() << "\n";
  for (std::size_t i = 0; i < d.alignment_path.size(); ++i)
    out << "step " << i << " " << d.alignment_path[i] << " " << num(d.attn_entropy[i]) << "\n";
  out << "frames " << d.token_entropy.size() << "\n";
  for (std::size_t i = 0; i < d.token_entropy.size(); ++i) {
    out << "frame " << i << " " << num(d.token_entropy[i]);
    for (std::size_t g = 0; g < groups; ++g)
      out << " " << d.sampled_tokens[i * groups + g];
    out << "\n";
  }
  if (!out) fail(ErrorKind::io, "diagnostics: write failed for " + path);
}

namespace {

std::istringstream expect_line(std::ifstream& in, const std::string& key) {
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::input, "diagnostics: truncated file at " + key);
  std::istringstream ls(line);
  std::string head;
  ls >> head;
  if (head != key) fail(ErrorKind::input, "diagnostics: expected '" + key + "', got '" + head + "'");
  return ls;
}

}  // namespace

SynthesisDiagnostics read_diagnostics(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "diagnostics: cannot open " + path);
  SynthesisDiagnostics d;
  {
    std::istringstream ls = expect_line(in, "mqtts-diagnostics");
    int version = 0;
    ls >> version;
    if (version != 1) fail(ErrorKind::input, "diagnostics: unsupported version");
  }
  auto read_index = [&](const std::string& key) {
    std::istringstream ls = expect_line(in, key);
    long long v = -1;
    ls >> v;
    if (!ls || v < 0) fail(ErrorKind::input, "diagnostics: bad value for " + key);
    return static_cast<Index>(v);
  };
  d.enc_len = read_index("enc_len");
  d.prompt_frames = read_index("prompt_frames");
  Index groups = read_index("groups");
  d.truncated = read_index("truncated") != 0;
  d.ended_by_token = read_index("ended_by_token") != 0;
  d.ended_by_alignment = read_index("ended_by_alignment") != 0;
  Index steps = read_index("steps");
  for (Index i = 0; i < steps; ++i) {
    std::istringstream ls = expect_line(in, "step");
    long long idx = -1, b = -1;
    double h = 0.0;
    ls >> idx >> b >> h;
    if (!ls || idx != i || b < 0) fail(ErrorKind::input, "diagnostics: bad step record");
    d.alignment_path.push_back(static_cast<Index>(b));
    d.attn_entropy.push_back(h);
  }
  Index frames = read_index("frames");
  for (Index i = 0; i < frames; ++i) {
    std::istringstream ls = expect_line(in, "frame");
    long long idx = -1;
    double h = 0.0;
    ls >> idx >> h;
    if (!ls || idx != i) fail(ErrorKind::input, "diagnostics: bad frame record");
    d.token_entropy.push_back(h);
    for (Index g = 0; g < groups; ++g) {
      long long t = 0;
      ls >> t;
      if (!ls) fail(ErrorKind::input, "diagnostics: bad frame record");
      d.sampled_tokens.push_back(static_cast<std::int32_t>(t));
    }
  }
  return d;
}

}  // namespace mqtts
