#include "mqtts/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mqtts/checkpoint.hpp"
#include "mqtts/config.hpp"
#include "mqtts/corpus.hpp"
#include "mqtts/error.hpp"
#include "mqtts/inference.hpp"
#include "mqtts/metrics.hpp"
#include "mqtts/svg.hpp"
#include "mqtts/trainer.hpp"
#include "mqtts/wavio.hpp"

namespace mqtts {
namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

void add_common(CLI::App* sub, CommonOpts& c) {
  sub->add_option("--config", c.config_path, "run configuration file");
  sub->add_option("--set", c.sets, "override one config key, key=value (repeatable)");
  sub->add_option("--seed", c.seed, "global seed applied to every section")
      ->each([&c](const std::string&) { c.seed_given = true; });
}

// Checkpoint-supplied text, when present, takes the place of the default
// config; an explicit --config wins over both. --set and --seed apply last.
RunConfig resolve_config(const CommonOpts& c, const std::string& embedded = "") {
  RunConfig cfg;
  if (!c.config_path.empty())
    cfg = load_config(c.config_path);
  else if (!embedded.empty())
    cfg = parse_config_text(embedded);
  else
    cfg = default_run_config();
  for (const std::string& s : c.sets) apply_override(cfg, s);
  if (c.seed_given) {
    cfg.corpus.seed = c.seed;
    cfg.stage1.seed = c.seed;
    cfg.stage2.seed = c.seed;
    cfg.synthesis.seed = c.seed;
  }
  return cfg;
}

CheckpointData load_kind(const std::string& path, const char* kind, const char* what) {
  CheckpointData ck = load_checkpoint(path);
  if (ck.kind != kind)
    fail(ErrorKind::config,
         std::string(what) + " checkpoint has kind " + ck.kind + ", expected " + kind);
  return ck;
}

Quantizer quantizer_from(const CheckpointData& ck) {
  RunConfig c = parse_config_text(ck.config_text);
  Rng init(0);
  Quantizer q(c.quantizer, init);
  load_params(q.params(), ck);
  return q;
}

Synthesizer synthesizer_from(const CheckpointData& ck) {
  RunConfig c = parse_config_text(ck.config_text);
  Rng init(0);
  Synthesizer s(c.synthesizer, init);
  load_params(s.params(), ck);
  return s;
}

void write_loss_log(const std::string& path, const char* stage, const TrainReport& rep) {
  if (path.empty()) return;
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot open " + path + " for writing");
  for (std::size_t i = 0; i < rep.loss.size(); ++i)
    out << stage << ' ' << i << ' ' << fmt17(rep.loss[i]) << "\n";
  if (!out) fail(ErrorKind::io, "write failed for " + path);
}

void write_loss_plot(const std::string& path, const std::string& title, const TrainReport& rep) {
  if (path.empty()) return;
  Series s;
  s.label = "training loss";
  for (std::size_t i = 0; i < rep.loss.size(); ++i) {
    s.x.push_back(static_cast<double>(i));
    s.y.push_back(rep.loss[i]);
  }
  write_line_plot(path, title, "step", "loss", {s});
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::vector<double> speaker_from_wav(const std::string& path) {
  return stub_speaker_embedder(read_wav(path));
}

// Deterministic phoneme sequence for the sweep's i-th utterance, drawn from
// the corpus inventory; independent of sigma so columns are comparable.
std::vector<std::int32_t> sweep_phones(const ToyCorpusSpec& spec, std::uint64_t seed, Index i) {
  Rng r = Rng(seed).fork(5000 + static_cast<std::uint64_t>(i));
  const Index spoken =
      spec.min_phones + static_cast<Index>(r.uniform_int(
                            static_cast<std::uint64_t>(spec.max_phones - spec.min_phones + 1)));
  std::vector<std::int32_t> ph{0};
  for (Index k = 0; k < spoken; ++k)
    ph.push_back(1 + static_cast<std::int32_t>(
                         r.uniform_int(static_cast<std::uint64_t>(spec.phonemes - 1))));
  ph.push_back(0);
  return ph;
}

int cmd_gen_corpus(const CommonOpts& copts, const std::string& out_dir, std::ostream& out) {
  RunConfig cfg = resolve_config(copts);
  cfg.validate();
  std::vector<Utterance> utts = generate_corpus(cfg.corpus);
  write_corpus(out_dir, utts);
  out << "wrote " << utts.size() << " utterances to " << out_dir << "\n";
  return 0;
}

int cmd_train_quantizer(const CommonOpts& copts, const std::string& corpus_dir,
                        const std::string& out_ckpt, const std::string& log_path,
                        const std::string& plot_path, std::ostream& out) {
  RunConfig cfg = resolve_config(copts);
  cfg.validate();
  std::vector<Utterance> utts = read_corpus(corpus_dir);
  Rng init = Rng(cfg.stage1.seed).fork(100);
  Quantizer q(cfg.quantizer, init);
  TrainReport rep = train_quantizer(q, utts, cfg.stage1, &out);
  save_checkpoint(out_ckpt, kQuantizerKind, write_config_text(cfg), q.params());
  write_loss_log(log_path, "stage1", rep);
  write_loss_plot(plot_path, "quantizer training", rep);
  out << "stage1 done: loss " << fmt17(rep.first()) << " -> " << fmt17(rep.last()) << ", reseeded "
      << rep.reseeded << ", checkpoint " << out_ckpt << "\n";
  return 0;
}

int cmd_train_tts(const CommonOpts& copts, const std::string& corpus_dir,
                  const std::string& quantizer_ckpt, const std::string& out_ckpt,
                  const std::string& log_path, const std::string& plot_path, std::ostream& out) {
  CheckpointData qck = load_kind(quantizer_ckpt, kQuantizerKind, "quantizer");
  RunConfig cfg = resolve_config(copts, qck.config_text);
  cfg.quantizer = parse_config_text(qck.config_text).quantizer;
  cfg.validate();
  Quantizer q = quantizer_from(qck);
  std::vector<Utterance> utts = read_corpus(corpus_dir);
  Rng init = Rng(cfg.stage2.seed).fork(200);
  Synthesizer s(cfg.synthesizer, init);
  TrainReport rep = train_synthesizer(s, q, utts, cfg.stage2, &out);
  save_checkpoint(out_ckpt, kSynthesizerKind, write_config_text(cfg), s.params());
  write_loss_log(log_path, "stage2", rep);
  write_loss_plot(plot_path, "synthesizer training", rep);
  out << "stage2 done: loss " << fmt17(rep.first()) << " -> " << fmt17(rep.last())
      << ", checkpoint " << out_ckpt << "\n";
  return 0;
}

int cmd_synthesize(const CommonOpts& copts, const std::string& quantizer_ckpt,
                   const std::string& tts_ckpt, const std::string& phones_text,
                   const std::string& speaker_ref, const std::string& out_wav,
                   const std::string& diag_path, const std::string& plot_path, std::ostream& out,
                   std::ostream& err) {
  CheckpointData qck = load_kind(quantizer_ckpt, kQuantizerKind, "quantizer");
  CheckpointData sck = load_kind(tts_ckpt, kSynthesizerKind, "tts");
  RunConfig cfg = resolve_config(copts, sck.config_text);
  cfg.quantizer = parse_config_text(qck.config_text).quantizer;
  cfg.validate();
  Quantizer q = quantizer_from(qck);
  Synthesizer s = synthesizer_from(sck);

  std::vector<std::int32_t> phones = parse_phone_list(phones_text);
  std::vector<double> speaker = speaker_from_wav(speaker_ref);
  SynthesisResult res = synthesize(q, s, phones, speaker, cfg.synthesis);

  write_wav(out_wav, res.wave);
  if (!diag_path.empty()) write_diagnostics(diag_path, res.diag);
  if (!plot_path.empty()) write_alignment_plot(plot_path, res.diag);

  const char* stop = res.diag.truncated        ? "truncated"
                     : res.diag.ended_by_token ? "token"
                                               : "alignment";
  out << "synthesized " << res.codes.t << " frames ("
      << fmt17(static_cast<double>(res.wave.samples.size()) /
               static_cast<double>(res.wave.sample_rate))
      << " s), stop=" << stop << ", wrote " << out_wav << "\n";
  if (res.diag.truncated) {
    err << "warning: synthesis hit max_frames and was truncated\n";
    return 4;
  }
  return 0;
}

int cmd_snr_sweep(const CommonOpts& copts, const std::string& quantizer_ckpt,
                  const std::string& tts_ckpt, const std::string& speaker_ref,
                  const std::string& sigmas_text, Index n_per_sigma, const std::string& out_path,
                  const std::string& plot_path, std::ostream& out) {
  CheckpointData qck = load_kind(quantizer_ckpt, kQuantizerKind, "quantizer");
  CheckpointData sck = load_kind(tts_ckpt, kSynthesizerKind, "tts");
  RunConfig cfg = resolve_config(copts, sck.config_text);
  cfg.quantizer = parse_config_text(qck.config_text).quantizer;
  cfg.validate();
  if (n_per_sigma < 1) fail(ErrorKind::config, "snr-sweep: --n must be positive");
  std::vector<double> sigmas = parse_double_list(sigmas_text);
  if (sigmas.empty()) fail(ErrorKind::config, "snr-sweep: empty sigma list");
  for (double s : sigmas)
    if (!(s >= 0.0)) fail(ErrorKind::config, "snr-sweep: sigma must be >= 0");
  Quantizer q = quantizer_from(qck);
  Synthesizer s = synthesizer_from(sck);
  std::vector<double> speaker = speaker_from_wav(speaker_ref);

  std::ofstream table(out_path, std::ios::binary);
  if (!table) fail(ErrorKind::io, "cannot open " + out_path + " for writing");
  table << "mqtts-snr-sweep 1\n";
  table << "sigma mean sd n\n";
  Series curve;
  curve.label = "mean WADA SNR";
  for (double sigma : sigmas) {
    std::vector<double> snrs;
    for (Index i = 0; i < n_per_sigma; ++i) {
      SynthesisConfig scfg = cfg.synthesis;
      scfg.prompt_sigma = sigma;
      scfg.seed = cfg.synthesis.seed + static_cast<std::uint64_t>(i);
      std::vector<std::int32_t> phones = sweep_phones(cfg.corpus, cfg.synthesis.seed, i);
      SynthesisResult res = synthesize(q, s, phones, speaker, scfg);
      if (res.codes.t < 1) fail(ErrorKind::numeric, "snr-sweep: empty synthesis");
      snrs.push_back(wada_snr(res.wave));
    }
    const double m = mean_of(snrs);
    table << fmt17(sigma) << ' ' << fmt17(m) << ' ' << fmt17(sd_of(snrs)) << ' ' << snrs.size()
          << "\n";
    curve.x.push_back(sigma);
    curve.y.push_back(m);
    out << "sigma " << fmt17(sigma) << ": mean snr " << fmt17(m) << " dB over " << snrs.size()
        << " syntheses\n";
  }
  if (!table) fail(ErrorKind::io, "write failed for " + out_path);
  table.close();
  if (!plot_path.empty())
    write_line_plot(plot_path, "prompt noise sweep", "prompt sigma", "mean WADA SNR (dB)", {curve});
  return 0;
}

int cmd_evaluate(const std::string& ref_dir, const std::string& syn_dir,
                 const std::string& out_path, std::ostream& out) {
  std::vector<Utterance> ref = read_corpus(ref_dir);
  std::vector<Utterance> syn = read_corpus(syn_dir);
  std::map<std::string, const Utterance*> by_id;
  for (const Utterance& u : syn) by_id[u.id] = &u;
  if (by_id.size() != syn.size()) fail(ErrorKind::manifest, "evaluate: duplicate ids in " + syn_dir);
  if (ref.size() != syn.size())
    fail(ErrorKind::manifest, "evaluate: unpaired ids between " + ref_dir + " and " + syn_dir);
  std::vector<const Utterance*> pair_syn(ref.size(), nullptr);
  for (std::size_t i = 0; i < ref.size(); ++i) {
    auto it = by_id.find(ref[i].id);
    if (it == by_id.end())
      fail(ErrorKind::manifest, "evaluate: no synthesized pair for id " + ref[i].id);
    pair_syn[i] = it->second;
  }

  const Index n = static_cast<Index>(ref.size());
  std::vector<double> mcds(ref.size()), ssss(ref.size()), snrs(ref.size());
  Mat emb_ref(n, kSpeakerDim), emb_syn(n, kSpeakerDim);
#pragma omp parallel for schedule(dynamic)
  for (Index i = 0; i < n; ++i) {
    const std::size_t k = static_cast<std::size_t>(i);
    const std::vector<double> er = stub_speaker_embedder(ref[k].wave);
    const std::vector<double> es = stub_speaker_embedder(pair_syn[k]->wave);
    mcds[k] = mcd(ref[k].wave, pair_syn[k]->wave);
    ssss[k] = speaker_similarity(er, es);
    snrs[k] = wada_snr(pair_syn[k]->wave);
    std::copy(er.begin(), er.end(), emb_ref.row(i));
    std::copy(es.begin(), es.end(), emb_syn.row(i));
  }
  const double fre = frechet_distance(emb_ref, emb_syn);

  std::ofstream rep(out_path, std::ios::binary);
  if (!rep) fail(ErrorKind::io, "cannot open " + out_path + " for writing");
  rep << "mqtts-evaluation 1\n";
  rep << "pairs " << n << "\n";
  rep << "frechet " << fmt17(fre) << "\n";
  rep << "mcd_mean " << fmt17(mean_of(mcds)) << " sd " << fmt17(sd_of(mcds)) << "\n";
  rep << "sss_mean " << fmt17(mean_of(ssss)) << " sd " << fmt17(sd_of(ssss)) << "\n";
  rep << "snr_mean " << fmt17(mean_of(snrs)) << " sd " << fmt17(sd_of(snrs)) << "\n";
  rep << "id mcd sss snr\n";
  for (std::size_t i = 0; i < ref.size(); ++i)
    rep << ref[i].id << ' ' << fmt17(mcds[i]) << ' ' << fmt17(ssss[i]) << ' ' << fmt17(snrs[i])
        << "\n";
  if (!rep) fail(ErrorKind::io, "write failed for " + out_path);
  out << "evaluated " << n << " pairs: mcd " << fmt17(mean_of(mcds)) << ", sss "
      << fmt17(mean_of(ssss)) << ", snr " << fmt17(mean_of(snrs)) << ", frechet " << fmt17(fre)
      << "\n";
  return 0;
}

int cmd_plot_alignment(const std::string& diag_path, const std::string& out_path,
                       std::ostream& out) {
  SynthesisDiagnostics diag = read_diagnostics(diag_path);
  write_alignment_plot(out_path, diag);
  out << "plotted " << diag.alignment_path.size() << " steps to " << out_path << "\n";
  return 0;
}

int exit_code_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::io:
    case ErrorKind::manifest:
      return 3;
    default:
      return 2;
  }
}

}  // namespace

std::vector<std::int32_t> parse_phone_list(const std::string& text) {
  std::string t = text;
  std::replace(t.begin(), t.end(), ',', ' ');
  std::istringstream in(t);
  std::vector<std::int32_t> out;
  std::string tok;
  while (in >> tok) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      out.push_back(static_cast<std::int32_t>(v));
    } catch (const std::exception&) {
      fail(ErrorKind::config, "bad phoneme id '" + tok + "'");
    }
  }
  if (out.empty()) fail(ErrorKind::config, "empty phoneme list");
  return out;
}

std::vector<double> parse_double_list(const std::string& text) {
  std::string t = text;
  std::replace(t.begin(), t.end(), ',', ' ');
  std::istringstream in(t);
  std::vector<double> out;
  std::string tok;
  while (in >> tok) {
    try {
      std::size_t used = 0;
      const double v = std::stod(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      out.push_back(v);
    } catch (const std::exception&) {
      fail(ErrorKind::config, "bad number '" + tok + "'");
    }
  }
  return out;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"multi-codebook TTS pipeline"};
  app.name("mqtts");
  app.require_subcommand(1);

  CommonOpts gen_c, tq_c, tt_c, syn_c, sweep_c;
  std::string gen_out;
  CLI::App* gen = app.add_subcommand("gen-corpus", "generate the synthetic corpus");
  add_common(gen, gen_c);
  gen->add_option("--out", gen_out, "output directory")->required();

  std::string tq_corpus, tq_out, tq_log, tq_plot;
  CLI::App* tq = app.add_subcommand("train-quantizer", "stage 1: fit the quantizer");
  add_common(tq, tq_c);
  tq->add_option("--corpus", tq_corpus, "corpus directory")->required();
  tq->add_option("--out", tq_out, "output checkpoint")->required();
  tq->add_option("--log", tq_log, "per-step loss log file");
  tq->add_option("--plot", tq_plot, "loss curve plot (svg)");

  std::string tt_corpus, tt_q, tt_out, tt_log, tt_plot;
  CLI::App* tt = app.add_subcommand("train-tts", "stage 2: fit the synthesizer");
  add_common(tt, tt_c);
  tt->add_option("--corpus", tt_corpus, "corpus directory")->required();
  tt->add_option("--quantizer", tt_q, "stage-1 checkpoint")->required();
  tt->add_option("--out", tt_out, "output checkpoint")->required();
  tt->add_option("--log", tt_log, "per-step loss log file");
  tt->add_option("--plot", tt_plot, "loss curve plot (svg)");

  std::string sy_q, sy_t, sy_phones, sy_ref, sy_out, sy_diag, sy_plot;
  CLI::App* sy = app.add_subcommand("synthesize", "synthesize one utterance");
  add_common(sy, syn_c);
  sy->add_option("--quantizer", sy_q, "stage-1 checkpoint")->required();
  sy->add_option("--tts", sy_t, "stage-2 checkpoint")->required();
  sy->add_option("--phones", sy_phones, "phoneme ids, space or comma separated")->required();
  sy->add_option("--speaker-ref", sy_ref, "reference wav for the speaker embedding")->required();
  sy->add_option("--out", sy_out, "output wav")->required();
  sy->add_option("--diagnostics", sy_diag, "diagnostics text file");
  sy->add_option("--plot", sy_plot, "alignment plot (svg)");

  std::string sw_q, sw_t, sw_ref, sw_sigmas = "0,1e-5,1e-3,1e-1", sw_out, sw_plot;
  Index sw_n = 5;
  CLI::App* sw = app.add_subcommand("snr-sweep", "prompt-noise sweep with WADA SNR");
  add_common(sw, sweep_c);
  sw->add_option("--quantizer", sw_q, "stage-1 checkpoint")->required();
  sw->add_option("--tts", sw_t, "stage-2 checkpoint")->required();
  sw->add_option("--speaker-ref", sw_ref, "reference wav for the speaker embedding")->required();
  sw->add_option("--sigmas", sw_sigmas, "comma separated prompt noise levels");
  sw->add_option("--n", sw_n, "syntheses per sigma");
  sw->add_option("--out", sw_out, "output table")->required();
  sw->add_option("--plot", sw_plot, "sweep plot (svg)");

  std::string ev_ref, ev_syn, ev_out;
  CLI::App* ev = app.add_subcommand("evaluate", "paired metric report over two corpora");
  ev->add_option("--ref", ev_ref, "reference corpus directory")->required();
  ev->add_option("--syn", ev_syn, "synthesized corpus directory")->required();
  ev->add_option("--out", ev_out, "report file")->required();

  std::string pa_diag, pa_out;
  CLI::App* pa = app.add_subcommand("plot-alignment", "render a diagnostics file");
  pa->add_option("--diagnostics", pa_diag, "diagnostics text file")->required();
  pa->add_option("--out", pa_out, "output svg")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_gen_corpus(gen_c, gen_out, out);
    if (*tq) return cmd_train_quantizer(tq_c, tq_corpus, tq_out, tq_log, tq_plot, out);
    if (*tt) return cmd_train_tts(tt_c, tt_corpus, tt_q, tt_out, tt_log, tt_plot, out);
    if (*sy)
      return cmd_synthesize(syn_c, sy_q, sy_t, sy_phones, sy_ref, sy_out, sy_diag, sy_plot, out,
                            err);
    if (*sw)
      return cmd_snr_sweep(sweep_c, sw_q, sw_t, sw_ref, sw_sigmas, sw_n, sw_out, sw_plot, out);
    if (*ev) return cmd_evaluate(ev_ref, ev_syn, ev_out, out);
    if (*pa) return cmd_plot_alignment(pa_diag, pa_out, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<std::string> full;
  full.push_back("mqtts");
  full.insert(full.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  argv.reserve(full.size());
  for (const std::string& s : full) argv.push_back(s.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace mqtts
