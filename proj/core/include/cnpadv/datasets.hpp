#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cnpadv/rng.hpp"
#include "cnpadv/tensor.hpp"

namespace cnpadv::data {

using diff::Tensor;

/// One sampled function: covariates (N x d_x, strictly increasing for the 1D
/// families), observations (N x d_y), the generative parameters that produced
/// it, and an optional class label.
struct FunctionInstance {
  Tensor x;
  Tensor y;
  std::map<std::string, double> gen_params;
  std::optional<int> label;
};

enum class Split { Train, Validation, Test };
std::string to_string(Split split);
Split split_from_string(const std::string& s);

/// Covariate range and per-feature observation statistics. Computed from the
/// train split only and reused verbatim for the other splits.
struct NormStats {
  std::vector<double> x_lo, x_hi;   // raw range mapped affinely to [-1, 1]
  std::vector<double> y_mean, y_std;
  std::vector<std::uint8_t> y_zero_var;
  bool zero_variance_warning = false;
};

struct MetaDataset {
  std::string family;
  Split split = Split::Train;
  std::vector<FunctionInstance> instances;
  bool normalized = false;
  NormStats stats;  // meaningful when normalized

  int size() const { return static_cast<int>(instances.size()); }
  int n_points() const;
  int d_x() const;
  int d_y() const;
};

// --- generators (raw covariates; call normalize() afterwards) ---

/// y = a * sin(x - b), a ~ U[-1,1], b ~ U[-0.5,0.5], x uniform on [-3pi, 3pi].
MetaDataset gen_sine(int n_funcs, int n_points, std::uint64_t seed);

/// y = a * exp(-x/2) * sin(x - b), a ~ U[-3,3], b ~ U[-1,1], x uniform on [0,5].
MetaDataset gen_oscillator(int n_funcs, int n_points, std::uint64_t seed);

/// exp(-(x - x')^2 / (2 sigma^2)).
double rbf_kernel(double x, double x_prime, double sigma);

/// One GP prior draw per instance on a uniform grid over [-1,1]: y ~ N(0,
/// K + jitter*I) via the lower Cholesky factor of the jittered kernel matrix.
/// Jitter starts at 1e-6 and escalates x10 up to 1e-2 before failing.
MetaDataset gen_gp_rbf(int n_funcs, int n_points, double sigma, std::uint64_t seed);

// --- normalization ---

NormStats compute_norm_stats(const MetaDataset& train);
MetaDataset normalize(const MetaDataset& ds, const NormStats& stats);
/// Convenience for the train split: stats from the dataset itself.
MetaDataset normalize(const MetaDataset& train);
Tensor denormalize_y(const Tensor& y, const NormStats& stats);

// --- episodes ---

/// K instances, each with a context index subset of the full target set.
/// One context fraction is drawn per batch and shared by all K instances, so
/// context sets are rectangular.
struct EpisodeBatch {
  double context_fraction = 0.0;
  std::vector<int> instance_ids;              // size K
  std::vector<std::vector<int>> context_idx;  // per instance, size C each
  int n_context = 0;                          // C
  int n_target = 0;                           // T = N (all points)
};

/// Draws K distinct instances, a fraction ~ U[lo,hi], and per-instance
/// context indices without replacement; C = floor(fraction*N) clamped to 1.
EpisodeBatch make_episode(const MetaDataset& ds, int k, double frac_lo, double frac_hi,
                          Rng& rng);

/// Same, over a caller-chosen instance list (training epochs batch this way).
EpisodeBatch make_episode_for(const MetaDataset& ds, std::span<const int> instance_ids,
                              double frac_lo, double frac_hi, Rng& rng);

/// Stacked episode tensors: context rows grouped per instance (K*C x d), then
/// targets (K*T x d) in grid order.
struct EpisodeTensors {
  Tensor xc, yc, xt, yt;
  int k = 0, c = 0, t = 0;
};

EpisodeTensors gather(const MetaDataset& ds, const EpisodeBatch& episode);

// --- file format (one self-describing text file per split) ---

void save_dataset(const std::string& path, const MetaDataset& ds);
MetaDataset load_dataset(const std::string& path);

}  // namespace cnpadv::data
