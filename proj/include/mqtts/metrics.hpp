#pragma once

// Objective evaluation: DTW, mel-cepstral distortion, Fréchet distance on
// embedding sets, cosine speaker similarity, blind SNR estimation from the
// waveform amplitude distribution, and autocorrelation pitch tracking.

#include <span>
#include <utility>
#include <vector>

#include "mqtts/audio.hpp"
#include "mqtts/mat.hpp"

namespace mqtts {

struct DtwResult {
  double total_cost = 0.0;   // minimum summed frame distance
  Index pairs = 0;           // aligned pairs on the optimal path
  double mean_cost = 0.0;    // total_cost / pairs
  std::vector<std::pair<Index, Index>> path;  // (row in a, row in b), ascending
};

// Dynamic time warping over Euclidean row distances with symmetric steps
// (diagonal, vertical, horizontal, all weight 1). Among minimum-cost
// alignments the shortest path is chosen, which keeps the mean cost symmetric
// in the arguments.
DtwResult dtw(const Mat& a, const Mat& b);

// 23 mel-cepstral coefficients per frame: orthonormal DCT-II of a 40-band
// log-mel spectrum (window 1024, hop 256), coefficients 1..23 (energy
// coefficient 0 excluded).
Mat mcep_sequence(const Waveform& w);

// Mean Euclidean MCEP distance along the DTW alignment.
double mcd(const Waveform& ref, const Waveform& syn);

// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
// Eigenvalues are unordered; vecs columns are the matching eigenvectors.
void sym_eig(const Mat& sym, std::vector<double>& vals, Mat& vecs);

// 2-Wasserstein distance between Gaussians fitted to the two embedding sets
// (rows = samples), after multiplying features by `scale`.
double frechet_distance(const Mat& real, const Mat& fake, double scale = 10.0);

double speaker_similarity(std::span<const double> e1, std::span<const double> e2);

// Blind SNR estimate in dB from the amplitude-distribution statistic
// ln E|z| - E ln|z|, inverted through the embedded lookup table with linear
// interpolation and clamped to the table range. Exact zero samples are
// excluded from the statistic.
double wada_snr(const Waveform& x);

// Per-frame F0 in Hz (0 where unvoiced): 25 ms frames, 10 ms hop,
// autocorrelation peak over 60..400 Hz lags with parabolic refinement,
// voicing gated on normalized peak height and frame RMS.
std::vector<double> pitch_contour(const Waveform& x);

}  // namespace mqtts
