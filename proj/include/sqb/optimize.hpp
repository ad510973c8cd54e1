#pragma once

// Stage 1: superquadric fitting against silhouettes with the attention
// centering term and the split / fuse / prune schedule.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sqb/acloss.hpp"
#include "sqb/autodiff.hpp"
#include "sqb/dataset.hpp"
#include "sqb/scene.hpp"
#include "sqb/structure.hpp"

namespace sqb {

/// Iteration count `paper_iters` rescaled to a run of `total` iterations
/// against the 50k reference length, rounded up, at least 1.
int scaled_iterations(int paper_iters, int total);

struct Stage1Config {
  double gamma = 0.2;
  int warmup_iters = 2000;       // reference-scale, see scale_schedule
  int total_iters = 50000;
  int structure_cadence = 1000;  // reference-scale
  bool scale_schedule = true;
  double beta = 0.7;
  int xi = 100;
  int initial_k = 10;
  double prune_alpha = 0.1;

  int subdivision = 2;
  int batch_views = 1;
  int structure_views = 4;
  bool enable_split = true;
  bool enable_fuse = true;
  int min_cluster_size = 3;
  int max_prompts = 64;
  /// AC term measured in units of the image diagonal instead of pixels.
  bool ac_normalized = true;
  // More layers than the renderer default because small faces crowd thin tips.
  // A sharper edge than the renderer default, since the one-sided soft edge
  // otherwise biases fitted silhouettes inward by a few percent.
  SoftRenderConfig render{.sigma = 0.1, .faces_per_pixel = 40};

  double lr_alpha = 0.02;
  double lr_rotation = 0.01;
  double lr_translation = 0.01;  // times the hull radius
  double lr_scale = 0.01;        // times the hull radius
  double lr_shape = 0.01;
  double lr_final_ratio = 0.1;   // exponential decay target at total_iters
  double init_alpha = 0.9;
  double init_tilt_deg = 20.0;  // max random tilt away from the hull axes
  bool background_primitives = true;

  int log_every = 0;  // <= 0: every structure cadence
  int chamfer_samples = 20000;

  void validate() const;
  int warmup() const;
  int cadence() const;
  int log_interval() const;
};

/// One metrics CSV row; NaN fields are written empty.
struct MetricsRow {
  int iter = 0;
  double l_rec = 0.0;
  double l_ac = 0.0;
  int k_active = 0;
  double chamfer = std::numeric_limits<double>::quiet_NaN();
  double psnr = std::numeric_limits<double>::quiet_NaN();
  double ssim = std::numeric_limits<double>::quiet_NaN();
};
void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsRow> rows);

/// Adam moments per parameter group: alpha, rot6, trans, scale, eps.
using PrimitiveAdam = std::array<ad::AdamState, 5>;

struct HullBox {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Zero();
  Vec3 center() const { return 0.5 * (lo + hi); }
  Vec3 half_extent() const { return 0.5 * (hi - lo); }
};
/// Bounding box of the voxels (res^3 grid) that project inside every
/// silhouette. Throws ConfigError when the hull is empty.
HullBox visual_hull_box(const Dataset& ds, int res = 32);

/// Area-weighted samples of the union surface of the active object primitives.
std::vector<Vec3> sample_scene_surface(const Scene& scene, const IcosphereTemplate& tpl, std::size_t n,
                                       std::mt19937_64& rng);

/// Soft render of the active object primitives.
RenderOutput render_scene_objects(const Scene& scene, const IcosphereTemplate& tpl, const Camera& cam,
                                  const SoftRenderConfig& cfg);

/// Chamfer distance between `gt` and `samples` surface points drawn with `seed`.
double scene_chamfer(const Scene& scene, const IcosphereTemplate& tpl, std::span<const Vec3> gt, std::size_t samples,
                     std::uint64_t seed);

/// Silhouette loss (mean squared error) of object primitives in one view and
/// its gradient in the flat parameter layout.
double silhouette_loss(std::span<const Superquadric> prims, const View& view, const IcosphereTemplate& tpl,
                       const SoftRenderConfig& cfg, std::vector<Superquadric::Params>* grads = nullptr);

struct StepStats {
  double l_rec = 0.0;
  double l_ac = 0.0;
  double total = 0.0;
};

/// Serializable optimizer state.
struct Stage1State {
  Scene scene;
  std::map<PrimitiveId, PrimitiveAdam> adam;
  int iteration = 0;
  std::mt19937_64 rng;
  double hull_radius = 1.0;
};

class Stage1 {
 public:
  /// `provider` may be null when gamma is 0 and split/fuse are disabled.
  Stage1(const Dataset& ds, const AttentionProvider* provider, Stage1Config cfg, std::uint64_t seed,
         EventLog* log = nullptr);

  /// K random primitives inside the visual hull box plus the background pair.
  void initialize();
  /// Replaces the scene (tests); Adam states reset.
  void set_scene(Scene scene, double hull_radius);
  void restore(Stage1State state);

  bool done() const { return state_.iteration >= cfg_.total_iters; }
  /// One iteration, structural checks first when due. Throws Diverged.
  StepStats step();
  /// Steps to total_iters, appending metrics rows on the log interval.
  void run(const std::function<void(const MetricsRow&)>& on_row = {});

  /// Split, fuse and prune on the current scene; returns the number of events.
  int structure_step();

  /// Loss terms of the current scene on one view without stepping.
  StepStats evaluate(int view, bool with_ac) const;
  MetricsRow measure(const StepStats& last) const;
  /// Hard-thresholded silhouette IoU averaged over views.
  double mean_silhouette_iou() const;

  const Stage1State& state() const { return state_; }
  Stage1State& state() { return state_; }
  const Stage1Config& config() const { return cfg_; }
  const IcosphereTemplate& icosphere() const { return tpl_; }
  const std::vector<MetricsRow>& metrics() const { return rows_; }
  std::vector<MetricsRow>& metrics() { return rows_; }

 private:
  StepStats forward_backward(std::span<const int> views, bool with_ac, const std::vector<PrimitiveId>& trainable,
                             std::map<PrimitiveId, Superquadric::Params>* grads) const;
  void adam_update(PrimitiveId id, const Superquadric::Params& grad, int step_index);
  void fuse_warmup(Scene& scene, PrimitiveId id, int steps);
  std::vector<int> sample_views(int count);
  void log_event(const std::string& event, std::span<const PrimitiveId> ids, const std::string& metrics);

  const Dataset& ds_;
  const AttentionProvider* provider_;
  Stage1Config cfg_;
  EventLog* log_;
  IcosphereTemplate tpl_;
  Stage1State state_;
  std::vector<ImageEmbedding> embeddings_;
  std::vector<MetricsRow> rows_;
};

}  // namespace sqb
