#include "mqtts/corpus.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mqtts/error.hpp"
#include "mqtts/rng.hpp"
#include "mqtts/wavio.hpp"

namespace mqtts {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kAmp = 0.4;
constexpr double kChirpRatio = 1.25;

// short raised-cosine fade at segment edges so motif joins stay click-free
void apply_fade(std::vector<double>& seg, std::size_t fade) {
  if (seg.size() < 2 * fade) return;
  for (std::size_t i = 0; i < fade; ++i) {
    double w = 0.5 - 0.5 * std::cos(kPi * static_cast<double>(i) / static_cast<double>(fade));
    seg[i] *= w;
    seg[seg.size() - 1 - i] *= w;
  }
}

}  // namespace

void ToyCorpusSpec::validate() const {
  if (utterances < 1) fail(ErrorKind::config, "corpus: utterances must be positive");
  if (phonemes < 2) fail(ErrorKind::config, "corpus: need the pause symbol plus at least one motif");
  if (speakers < 1) fail(ErrorKind::config, "corpus: speakers must be positive");
  if (min_phones < 1 || max_phones < min_phones)
    fail(ErrorKind::config, "corpus: bad spoken-symbol range");
  if (min_dwell < 1 || max_dwell < min_dwell) fail(ErrorKind::config, "corpus: bad dwell range");
  if (!(noise_min >= 0.0) || !(noise_max >= noise_min))
    fail(ErrorKind::config, "corpus: bad noise floor range");
  if (hop < 1) fail(ErrorKind::config, "corpus: hop must be positive");
  if (sample_rate < 1) fail(ErrorKind::config, "corpus: bad sample rate");
}

double motif_frequency(Index speaker, std::int32_t phoneme) {
  double base = 120.0 + 30.0 * static_cast<double>(speaker);
  return base * std::pow(2.0, static_cast<double>(phoneme) / 24.0);
}

Utterance generate_utterance(const ToyCorpusSpec& spec, Index index) {
  spec.validate();
  if (index < 0 || index >= spec.utterances) fail(ErrorKind::input, "corpus: utterance index out of range");
  Rng rng = Rng(spec.seed).fork(static_cast<std::uint64_t>(index));

  Utterance u;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "utt_%04lld", static_cast<long long>(index));
  u.id = buf;
  u.speaker = index % spec.speakers;

  Index spoken = spec.min_phones +
                 static_cast<Index>(rng.uniform_int(
                     static_cast<std::uint64_t>(spec.max_phones - spec.min_phones + 1)));
  u.phones.push_back(0);
  for (Index i = 0; i < spoken; ++i)
    u.phones.push_back(1 + static_cast<std::int32_t>(
                               rng.uniform_int(static_cast<std::uint64_t>(spec.phonemes - 1))));
  u.phones.push_back(0);

  double sigma_bg = spec.noise_min;
  if (spec.noise_max > spec.noise_min && spec.noise_min > 0.0)
    sigma_bg = std::exp(rng.uniform(std::log(spec.noise_min), std::log(spec.noise_max)));

  u.wave.sample_rate = spec.sample_rate;
  const double dt = 1.0 / static_cast<double>(spec.sample_rate);
  const std::size_t fade = static_cast<std::size_t>(spec.sample_rate / 200);  // 5 ms

  for (std::int32_t p : u.phones) {
    Index dwell = spec.min_dwell +
                  static_cast<Index>(rng.uniform_int(
                      static_cast<std::uint64_t>(spec.max_dwell - spec.min_dwell + 1)));
    std::size_t len = static_cast<std::size_t>(dwell * spec.hop);
    std::vector<double> seg(len, 0.0);
    if (p != 0) {
      double f0 = motif_frequency(u.speaker, p);
      switch (p % 3) {
        case 1: {  // steady tone
          for (std::size_t i = 0; i < len; ++i)
            seg[i] = kAmp * std::sin(2.0 * kPi * f0 * static_cast<double>(i) * dt);
          break;
        }
        case 2: {  // upward chirp
          double phase = 0.0;
          for (std::size_t i = 0; i < len; ++i) {
            double frac = static_cast<double>(i) / static_cast<double>(len);
            double f = f0 * (1.0 + (kChirpRatio - 1.0) * frac);
            phase += 2.0 * kPi * f * dt;
            seg[i] = kAmp * std::sin(phase);
          }
          break;
        }
        default: {  // modulated noise burst
          for (std::size_t i = 0; i < len; ++i) {
            double env = 0.6 + 0.4 * std::sin(2.0 * kPi * 8.0 * static_cast<double>(i) * dt);
            seg[i] = 0.3 * env * rng.normal();
          }
          break;
        }
      }
      apply_fade(seg, fade);
    }
    for (double s : seg) u.wave.samples.push_back(s);
  }

  if (sigma_bg > 0.0)
    for (double& s : u.wave.samples) s += sigma_bg * rng.normal();
  return u;
}

std::vector<Utterance> generate_corpus(const ToyCorpusSpec& spec) {
  spec.validate();
  std::vector<Utterance> out(static_cast<std::size_t>(spec.utterances));
#pragma omp parallel for schedule(dynamic)
  for (Index i = 0; i < spec.utterances; ++i)
    out[static_cast<std::size_t>(i)] = generate_utterance(spec, i);
  return out;
}

void write_corpus(const std::string& dir, const std::vector<Utterance>& utts) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::io, "corpus: cannot create directory " + dir);
  std::ofstream man(dir + "/manifest.tsv", std::ios::trunc);
  if (!man) fail(ErrorKind::io, "corpus: cannot open manifest in " + dir);
  for (const Utterance& u : utts) {
    man << u.id << "\t" << u.speaker << "\t";
    for (std::size_t i = 0; i < u.phones.size(); ++i) {
      if (i) man << " ";
      man << u.phones[i];
    }
    man << "\n";
    write_wav(dir + "/" + u.id + ".wav", u.wave);
  }
  if (!man) fail(ErrorKind::io, "corpus: manifest write failed in " + dir);
}

std::vector<Utterance> read_corpus(const std::string& dir) {
  std::ifstream man(dir + "/manifest.tsv");
  if (!man) fail(ErrorKind::io, "corpus: cannot open manifest in " + dir);
  std::vector<Utterance> out;
  std::string line;
  while (std::getline(man, line)) {
    if (line.empty()) continue;
    std::size_t t1 = line.find('\t');
    std::size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) fail(ErrorKind::manifest, "corpus: malformed manifest row: " + line);
    Utterance u;
    u.id = line.substr(0, t1);
    try {
      u.speaker = std::stoll(line.substr(t1 + 1, t2 - t1 - 1));
    } catch (const std::exception&) {
      fail(ErrorKind::manifest, "corpus: bad speaker id in row: " + line);
    }
    std::istringstream ph(line.substr(t2 + 1));
    long long p = 0;
    while (ph >> p) u.phones.push_back(static_cast<std::int32_t>(p));
    if (u.id.empty() || u.phones.empty())
      fail(ErrorKind::manifest, "corpus: malformed manifest row: " + line);
    u.wave = read_wav(dir + "/" + u.id + ".wav");
    out.push_back(std::move(u));
  }
  return out;
}

}  // namespace mqtts
