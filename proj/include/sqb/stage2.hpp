#pragma once

// Stage 2: bound Gaussians fitted to the RGB views with the superquadrics frozen.

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "sqb/autodiff.hpp"
#include "sqb/dataset.hpp"
#include "sqb/gaussians.hpp"
#include "sqb/optimize.hpp"
#include "sqb/splat.hpp"
#include "sqb/structure.hpp"

namespace sqb {

struct Stage2Config {
  double lambda_ssim = 0.2;
  int total_iters = 20000;
  int densify_cadence = 2000;  // at the 20k reference length when scale_schedule is set
  bool scale_schedule = true;
  double epsilon_pos = 0.5;
  int sh_degree = 1;

  double lr_position = 5e-3;  // local units, decays to lr_position_final_ratio
  double lr_position_final_ratio = 0.01;
  double lr_scaling = 1.7e-2;  // log scale
  double lr_rotation = 1e-3;
  double lr_opacity = 0.05;   // logit
  double lr_sh = 2.5e-3;      // degree 0; higher degrees use a twentieth

  DensifyConfig densify;  // extent is replaced by the camera extent
  SplatRenderConfig render;
  int log_every = 0;  // <= 0: every densify cadence

  void validate() const;
  int cadence() const;
  int log_interval() const;
};

/// Adam moments per group: mu, quat, log scale, opacity logit, SH dc, SH rest.
using GaussianAdam = std::array<ad::AdamState, 6>;

struct Stage2State {
  GaussianScene gs;
  GaussianAdam adam;
  int iteration = 0;
  std::mt19937_64 rng;
  double extent = 1.0;
  // running densification statistics
  std::vector<double> grad_accum;
  std::vector<int> grad_count;
};

struct Stage2Stats {
  double l_rgb = 0.0;
  double l_pos = 0.0;
  double total = 0.0;
};

/// Zeroes the Adam moments and densification statistics, sized to the
/// current Gaussian list (after an edit changes it).
void reset_optimizer(Stage2State& state);

/// Radius of the camera centres around their mean, times 1.1.
double camera_extent(const Dataset& ds);
/// Mean RGB over every pixel of every view.
Vec3 mean_image_color(const Dataset& ds);

/// (1 - lambda) L1 + lambda (1 - SSIM) of a render against a target and its
/// gradient with respect to the render.
double rgb_loss(const Image& render, const Image& target, double lambda, Image* grad = nullptr);

class Stage2 {
 public:
  Stage2(const Dataset& ds, Stage2Config cfg, std::uint64_t seed, EventLog* log = nullptr);

  /// Binds one Gaussian per face of each visible primitive of `scene`.
  void initialize(const Scene& scene, int subdivision);
  void restore(Stage2State state);

  bool done() const { return state_.iteration >= cfg_.total_iters; }
  /// One iteration on a random view, densification first when due. Throws Diverged.
  Stage2Stats step();
  void run(const std::function<void(const MetricsRow&)>& on_row = {});
  /// Clone/split/prune with the accumulated statistics, Adam moments remapped.
  DensifyResult densify();

  Image render(int view) const;
  MetricsRow measure(const Stage2Stats& last) const;

  const Stage2State& state() const { return state_; }
  Stage2State& state() { return state_; }
  const Stage2Config& config() const { return cfg_; }
  const std::vector<MetricsRow>& metrics() const { return rows_; }

 private:
  void adam_update(const SplatGrads& g, const std::vector<Vec3>& pos_grad);
  void log_event(const std::string& event, const std::string& metrics);

  const Dataset& ds_;
  Stage2Config cfg_;
  EventLog* log_;
  Stage2State state_;
  std::vector<MetricsRow> rows_;
};

}  // namespace sqb
