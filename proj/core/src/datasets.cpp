#include "cnpadv/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include "cnpadv/errors.hpp"
#include "cnpadv/nn.hpp"

namespace cnpadv::data {

namespace {

Tensor linspace(double lo, double hi, int n) {
  Tensor x = Tensor::zeros(n, 1);
  for (int i = 0; i < n; ++i) x[i] = lo + (hi - lo) * i / (n - 1);
  return x;
}

/// In-place lower Cholesky; returns false on a non-positive pivot.
bool cholesky(std::vector<double>& a, int n) {
  for (int j = 0; j < n; ++j) {
    double d = a[static_cast<std::size_t>(j) * n + j];
    for (int k = 0; k < j; ++k) {
      const double l = a[static_cast<std::size_t>(j) * n + k];
      d -= l * l;
    }
    if (d <= 0.0) return false;
    const double ljj = std::sqrt(d);
    a[static_cast<std::size_t>(j) * n + j] = ljj;
    for (int i = j + 1; i < n; ++i) {
      double s = a[static_cast<std::size_t>(i) * n + j];
      for (int k = 0; k < j; ++k) {
        s -= a[static_cast<std::size_t>(i) * n + k] * a[static_cast<std::size_t>(j) * n + k];
      }
      a[static_cast<std::size_t>(i) * n + j] = s / ljj;
    }
    for (int k = j + 1; k < n; ++k) a[static_cast<std::size_t>(j) * n + k] = 0.0;
  }
  return true;
}

void check_gen_args(int n_funcs, int n_points) {
  if (n_funcs < 1) throw DataError("n_funcs must be >= 1");
  if (n_points < 2) throw DataError("n_points must be >= 2");
}

}  // namespace

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "validation") return Split::Validation;
  if (s == "test") return Split::Test;
  throw DataError("unknown split: " + s);
}

int MetaDataset::n_points() const {
  return instances.empty() ? 0 : instances.front().x.rows();
}
int MetaDataset::d_x() const { return instances.empty() ? 0 : instances.front().x.cols(); }
int MetaDataset::d_y() const { return instances.empty() ? 0 : instances.front().y.cols(); }

MetaDataset gen_sine(int n_funcs, int n_points, std::uint64_t seed) {
  check_gen_args(n_funcs, n_points);
  Rng rng(seed);
  MetaDataset ds;
  ds.family = "sine";
  const Tensor grid = linspace(-3.0 * std::numbers::pi, 3.0 * std::numbers::pi, n_points);
  ds.instances.reserve(n_funcs);
  for (int f = 0; f < n_funcs; ++f) {
    FunctionInstance inst;
    const double a = rng.uniform(-1.0, 1.0);
    const double b = rng.uniform(-0.5, 0.5);
    inst.x = grid;
    inst.y = Tensor::zeros(n_points, 1);
    for (int i = 0; i < n_points; ++i) inst.y[i] = a * std::sin(grid[i] - b);
    inst.gen_params = {{"a", a}, {"b", b}};
    ds.instances.push_back(std::move(inst));
  }
  return ds;
}

MetaDataset gen_oscillator(int n_funcs, int n_points, std::uint64_t seed) {
  check_gen_args(n_funcs, n_points);
  Rng rng(seed);
  MetaDataset ds;
  ds.family = "oscillator";
  const Tensor grid = linspace(0.0, 5.0, n_points);
  ds.instances.reserve(n_funcs);
  for (int f = 0; f < n_funcs; ++f) {
    FunctionInstance inst;
    const double a = rng.uniform(-3.0, 3.0);
    const double b = rng.uniform(-1.0, 1.0);
    inst.x = grid;
    inst.y = Tensor::zeros(n_points, 1);
    for (int i = 0; i < n_points; ++i) {
      inst.y[i] = a * std::exp(-0.5 * grid[i]) * std::sin(grid[i] - b);
    }
    inst.gen_params = {{"a", a}, {"b", b}};
    ds.instances.push_back(std::move(inst));
  }
  return ds;
}

double rbf_kernel(double x, double x_prime, double sigma) {
  if (sigma <= 0.0) throw DataError("rbf_kernel: sigma must be positive");
  const double d = x - x_prime;
  return std::exp(-(d * d) / (2.0 * sigma * sigma));
}

MetaDataset gen_gp_rbf(int n_funcs, int n_points, double sigma, std::uint64_t seed) {
  check_gen_args(n_funcs, n_points);
  Rng rng(seed);
  MetaDataset ds;
  ds.family = "gp-rbf";
  const Tensor grid = linspace(-1.0, 1.0, n_points);

  std::vector<double> kernel(static_cast<std::size_t>(n_points) * n_points);
  std::vector<double> chol;
  bool ok = false;
  for (double jitter = 1e-6; jitter <= 1e-2 + 1e-12; jitter *= 10.0) {
    for (int i = 0; i < n_points; ++i) {
      for (int j = 0; j < n_points; ++j) {
        kernel[static_cast<std::size_t>(i) * n_points + j] =
            rbf_kernel(grid[i], grid[j], sigma) + (i == j ? jitter : 0.0);
      }
    }
    chol = kernel;
    if (cholesky(chol, n_points)) {
      ok = true;
      break;
    }
  }
  if (!ok) throw DataError("gp-rbf: Cholesky failed even at maximum jitter 1e-2");

  ds.instances.reserve(n_funcs);
  std::vector<double> z(n_points);
  for (int f = 0; f < n_funcs; ++f) {
    for (int i = 0; i < n_points; ++i) z[i] = rng.normal();
    FunctionInstance inst;
    inst.x = grid;
    inst.y = Tensor::zeros(n_points, 1);
    for (int i = 0; i < n_points; ++i) {
      double s = 0.0;
      for (int j = 0; j <= i; ++j) s += chol[static_cast<std::size_t>(i) * n_points + j] * z[j];
      inst.y[i] = s;
    }
    ds.instances.push_back(std::move(inst));
  }
  return ds;
}

NormStats compute_norm_stats(const MetaDataset& train) {
  if (train.instances.empty()) throw DataError("cannot compute stats of an empty dataset");
  const int dx = train.d_x(), dy = train.d_y();
  NormStats st;
  st.x_lo.assign(dx, std::numeric_limits<double>::infinity());
  st.x_hi.assign(dx, -std::numeric_limits<double>::infinity());
  st.y_mean.assign(dy, 0.0);
  st.y_std.assign(dy, 0.0);
  st.y_zero_var.assign(dy, 0);

  std::int64_t count = 0;
  for (const auto& inst : train.instances) {
    const int n = inst.x.rows();
    count += n;
    for (int i = 0; i < n; ++i) {
      for (int d = 0; d < dx; ++d) {
        st.x_lo[d] = std::min(st.x_lo[d], inst.x.at(i, d));
        st.x_hi[d] = std::max(st.x_hi[d], inst.x.at(i, d));
      }
      for (int d = 0; d < dy; ++d) st.y_mean[d] += inst.y.at(i, d);
    }
  }
  for (int d = 0; d < dy; ++d) st.y_mean[d] /= static_cast<double>(count);
  for (const auto& inst : train.instances) {
    for (int i = 0; i < inst.y.rows(); ++i) {
      for (int d = 0; d < dy; ++d) {
        const double c = inst.y.at(i, d) - st.y_mean[d];
        st.y_std[d] += c * c;
      }
    }
  }
  for (int d = 0; d < dy; ++d) {
    st.y_std[d] = std::sqrt(st.y_std[d] / static_cast<double>(count));
    if (st.y_std[d] < 1e-12) {
      st.y_std[d] = 1.0;
      st.y_zero_var[d] = 1;
      st.zero_variance_warning = true;
    }
  }
  for (int d = 0; d < dx; ++d) {
    if (!(st.x_hi[d] > st.x_lo[d])) {
      throw DataError("covariate dimension " + std::to_string(d) + " has zero range");
    }
  }
  return st;
}

MetaDataset normalize(const MetaDataset& ds, const NormStats& stats) {
  if (ds.instances.empty()) throw DataError("cannot normalize an empty dataset");
  MetaDataset out = ds;
  const int dx = ds.d_x(), dy = ds.d_y();
  for (auto& inst : out.instances) {
    for (int i = 0; i < inst.x.rows(); ++i) {
      for (int d = 0; d < dx; ++d) {
        const double lo = stats.x_lo[d], hi = stats.x_hi[d];
        inst.x.at(i, d) = 2.0 * (inst.x.at(i, d) - lo) / (hi - lo) - 1.0;
      }
      for (int d = 0; d < dy; ++d) {
        inst.y.at(i, d) = (inst.y.at(i, d) - stats.y_mean[d]) / stats.y_std[d];
      }
    }
  }
  out.normalized = true;
  out.stats = stats;
  return out;
}

MetaDataset normalize(const MetaDataset& train) {
  return normalize(train, compute_norm_stats(train));
}

Tensor denormalize_y(const Tensor& y, const NormStats& stats) {
  Tensor out = y;
  const int dy = static_cast<int>(stats.y_mean.size());
  for (int i = 0; i < out.rows(); ++i) {
    for (int d = 0; d < dy; ++d) {
      out.at(i, d) = out.at(i, d) * stats.y_std[d] + stats.y_mean[d];
    }
  }
  return out;
}

EpisodeBatch make_episode_for(const MetaDataset& ds, std::span<const int> instance_ids,
                              double frac_lo, double frac_hi, Rng& rng) {
  if (!(frac_lo > 0.0 && frac_lo <= frac_hi && frac_hi <= 1.0)) {
    throw DataError("context fraction range must satisfy 0 < lo <= hi <= 1");
  }
  if (instance_ids.empty()) throw DataError("episode needs at least one instance");
  const int n = ds.n_points();
  EpisodeBatch ep;
  ep.context_fraction = frac_lo == frac_hi ? frac_lo : rng.uniform(frac_lo, frac_hi);
  ep.n_target = n;
  ep.n_context = std::max(1, static_cast<int>(std::floor(ep.context_fraction * n)));
  ep.instance_ids.assign(instance_ids.begin(), instance_ids.end());
  ep.context_idx.reserve(instance_ids.size());
  for (std::size_t i = 0; i < instance_ids.size(); ++i) {
    ep.context_idx.push_back(rng.sample_without_replacement(n, ep.n_context));
  }
  return ep;
}

EpisodeBatch make_episode(const MetaDataset& ds, int k, double frac_lo, double frac_hi,
                          Rng& rng) {
  if (k < 1 || k > ds.size()) {
    throw DataError("episode size K=" + std::to_string(k) + " out of range for dataset of " +
                    std::to_string(ds.size()));
  }
  const std::vector<int> ids = rng.sample_without_replacement(ds.size(), k);
  return make_episode_for(ds, ids, frac_lo, frac_hi, rng);
}

EpisodeTensors gather(const MetaDataset& ds, const EpisodeBatch& episode) {
  const int k = static_cast<int>(episode.instance_ids.size());
  const int c = episode.n_context, t = episode.n_target;
  const int dx = ds.d_x(), dy = ds.d_y();
  EpisodeTensors et;
  et.k = k;
  et.c = c;
  et.t = t;
  et.xc = Tensor::zeros(k * c, dx);
  et.yc = Tensor::zeros(k * c, dy);
  et.xt = Tensor::zeros(k * t, dx);
  et.yt = Tensor::zeros(k * t, dy);
  for (int ki = 0; ki < k; ++ki) {
    const FunctionInstance& inst = ds.instances[static_cast<std::size_t>(episode.instance_ids[ki])];
    for (int i = 0; i < c; ++i) {
      const int idx = episode.context_idx[static_cast<std::size_t>(ki)][static_cast<std::size_t>(i)];
      for (int d = 0; d < dx; ++d) et.xc.at(ki * c + i, d) = inst.x.at(idx, d);
      for (int d = 0; d < dy; ++d) et.yc.at(ki * c + i, d) = inst.y.at(idx, d);
    }
    for (int i = 0; i < t; ++i) {
      for (int d = 0; d < dx; ++d) et.xt.at(ki * t + i, d) = inst.x.at(i, d);
      for (int d = 0; d < dy; ++d) et.yt.at(ki * t + i, d) = inst.y.at(i, d);
    }
  }
  return et;
}

// ---------------------------------------------------------------------------
// Dataset file format

void save_dataset(const std::string& path, const MetaDataset& ds) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write dataset file: " + path);
  os << "cnpadv-dataset v1\n";
  os << "family " << ds.family << "\n";
  os << "split " << to_string(ds.split) << "\n";
  os << "n_instances " << ds.size() << "\n";
  os << "n_points " << ds.n_points() << "\n";
  os << "d_x " << ds.d_x() << "\n";
  os << "d_y " << ds.d_y() << "\n";
  os << "normalized " << (ds.normalized ? 1 : 0) << "\n";
  if (ds.normalized) {
    os << "x_range";
    for (std::size_t d = 0; d < ds.stats.x_lo.size(); ++d) {
      os << " " << diff::format_double(ds.stats.x_lo[d]) << " "
         << diff::format_double(ds.stats.x_hi[d]);
    }
    os << "\n";
    os << "y_stats";
    for (std::size_t d = 0; d < ds.stats.y_mean.size(); ++d) {
      os << " " << diff::format_double(ds.stats.y_mean[d]) << " "
         << diff::format_double(ds.stats.y_std[d]) << " "
         << static_cast<int>(ds.stats.y_zero_var[d]);
    }
    os << "\n";
    os << "warning " << (ds.stats.zero_variance_warning ? 1 : 0) << "\n";
  }
  for (int i = 0; i < ds.size(); ++i) {
    const FunctionInstance& inst = ds.instances[static_cast<std::size_t>(i)];
    os << "instance " << i << "\n";
    os << "gen_params " << inst.gen_params.size();
    for (const auto& [name, value] : inst.gen_params) {
      os << " " << name << " " << diff::format_double(value);
    }
    os << "\n";
    os << "label " << (inst.label ? std::to_string(*inst.label) : "none") << "\n";
    os << "x\n";
    for (std::int64_t j = 0; j < inst.x.size(); ++j) {
      os << diff::format_double(inst.x[j]) << (j + 1 == inst.x.size() ? "\n" : " ");
    }
    os << "y\n";
    for (std::int64_t j = 0; j < inst.y.size(); ++j) {
      os << diff::format_double(inst.y[j]) << (j + 1 == inst.y.size() ? "\n" : " ");
    }
  }
}

MetaDataset load_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read dataset file: " + path);
  std::string line;
  if (!std::getline(is, line) || line != "cnpadv-dataset v1") {
    throw DataError("bad dataset header in " + path);
  }
  MetaDataset ds;
  std::string tag, splitname;
  int n_instances = 0, n_points = 0, dx = 0, dy = 0, normalized = 0;
  is >> tag >> ds.family;
  is >> tag >> splitname;
  ds.split = split_from_string(splitname);
  is >> tag >> n_instances;
  is >> tag >> n_points;
  is >> tag >> dx;
  is >> tag >> dy;
  is >> tag >> normalized;
  if (is.fail()) throw DataError("corrupt dataset preamble in " + path);
  ds.normalized = normalized != 0;
  if (ds.normalized) {
    is >> tag;
    ds.stats.x_lo.resize(dx);
    ds.stats.x_hi.resize(dx);
    for (int d = 0; d < dx; ++d) is >> ds.stats.x_lo[d] >> ds.stats.x_hi[d];
    is >> tag;
    ds.stats.y_mean.resize(dy);
    ds.stats.y_std.resize(dy);
    ds.stats.y_zero_var.resize(dy);
    for (int d = 0; d < dy; ++d) {
      int zv = 0;
      is >> ds.stats.y_mean[d] >> ds.stats.y_std[d] >> zv;
      ds.stats.y_zero_var[d] = static_cast<std::uint8_t>(zv);
    }
    int warn = 0;
    is >> tag >> warn;
    ds.stats.zero_variance_warning = warn != 0;
  }
  ds.instances.reserve(n_instances);
  for (int i = 0; i < n_instances; ++i) {
    int idx = 0;
    is >> tag >> idx;
    if (is.fail() || tag != "instance") throw DataError("corrupt instance header in " + path);
    FunctionInstance inst;
    std::size_t n_params = 0;
    is >> tag >> n_params;
    for (std::size_t p = 0; p < n_params; ++p) {
      std::string name;
      double value = 0.0;
      is >> name >> value;
      inst.gen_params[name] = value;
    }
    std::string label;
    is >> tag >> label;
    if (label != "none") inst.label = std::stoi(label);
    is >> tag;
    inst.x = Tensor::zeros(n_points, dx);
    for (std::int64_t j = 0; j < inst.x.size(); ++j) is >> inst.x[j];
    is >> tag;
    inst.y = Tensor::zeros(n_points, dy);
    for (std::int64_t j = 0; j < inst.y.size(); ++j) is >> inst.y[j];
    if (is.fail()) throw DataError("corrupt instance values in " + path);
    ds.instances.push_back(std::move(inst));
  }
  return ds;
}

}  // namespace cnpadv::data
