#include "sqb/stage2.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"
#include "sqb/metrics.hpp"

namespace sqb {

void Stage2Config::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("stage2." + what);
  };
  require(lambda_ssim >= 0.0 && lambda_ssim <= 1.0, "lambda_ssim must lie in [0, 1]");
  require(total_iters > 0, "total_iters must be positive");
  require(densify_cadence > 0, "densify_cadence must be positive");
  require(epsilon_pos > 0.0, "epsilon_pos must be positive");
  require(sh_degree >= 0 && sh_degree <= 3, "sh_degree must lie in [0, 3]");
  require(lr_position > 0 && lr_scaling > 0 && lr_rotation > 0 && lr_opacity > 0 && lr_sh > 0,
          "learning rates must be positive");
  require(lr_position_final_ratio > 0.0 && lr_position_final_ratio <= 1.0,
          "lr_position_final_ratio must lie in (0, 1]");
  require(densify.grad_threshold > 0.0, "densify.grad_threshold must be positive");
  require(densify.percent_dense > 0.0, "densify.percent_dense must be positive");
  require(densify.prune_opacity >= 0.0 && densify.prune_opacity < 1.0, "densify.prune_opacity must lie in [0, 1)");
  try {
    render.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("stage2.render: ") + e.what());
  }
}

int Stage2Config::cadence() const {
  if (!scale_schedule) return densify_cadence;
  const long long num = static_cast<long long>(densify_cadence) * total_iters;
  return std::max<int>(1, static_cast<int>((num + 19999) / 20000));
}

int Stage2Config::log_interval() const { return log_every > 0 ? log_every : cadence(); }

double camera_extent(const Dataset& ds) {
  if (ds.views.empty()) return 1.0;
  Vec3 mean = Vec3::Zero();
  for (const auto& v : ds.views) mean += v.camera.center() / ds.views.size();
  double r = 0.0;
  for (const auto& v : ds.views) r = std::max(r, (v.camera.center() - mean).norm());
  return r > 0.0 ? 1.1 * r : 1.0;
}

Vec3 mean_image_color(const Dataset& ds) {
  Vec3 sum = Vec3::Zero();
  double count = 0.0;
  for (const auto& v : ds.views) {
    for (std::size_t p = 0; p < v.image.pixel_count(); ++p)
      for (int c = 0; c < 3; ++c) sum[c] += v.image.data[3 * p + c];
    count += static_cast<double>(v.image.pixel_count());
  }
  return count > 0.0 ? Vec3(sum / count) : Vec3::Constant(0.5);
}

double rgb_loss(const Image& render, const Image& target, double lambda, Image* grad) {
  if (!render.same_shape(target)) throw ShapeMismatch("rgb_loss: image shapes differ");
  const double n = static_cast<double>(render.data.size());
  double l1 = 0.0;
  for (std::size_t i = 0; i < render.data.size(); ++i) l1 += std::abs(render.data[i] - target.data[i]);
  l1 /= n;
  if (grad) {
    *grad = Image(render.width, render.height, render.channels);
    for (std::size_t i = 0; i < render.data.size(); ++i) {
      const double d = render.data[i] - target.data[i];
      grad->data[i] = (1.0 - lambda) * ((d > 0.0) - (d < 0.0)) / n;
    }
  }
  if (lambda == 0.0) return l1;
  std::vector<double> gs;
  const double s = grad ? ssim_with_grad(render, target, gs) : ssim(render, target);
  if (grad)
    for (std::size_t i = 0; i < gs.size(); ++i) grad->data[i] -= lambda * gs[i];
  return (1.0 - lambda) * l1 + lambda * (1.0 - s);
}

namespace {

constexpr int kMu = 0, kQuat = 1, kScale = 2, kOpacity = 3, kShDc = 4, kShRest = 5;

double logit(double p) {
  p = std::clamp(p, 1e-12, 1.0 - 1e-12);
  return std::log(p / (1.0 - p));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

int group_width(int group, int nsh) {
  static constexpr int widths[] = {3, 4, 3, 1, 3};
  return group == kShRest ? 3 * (nsh - 1) : widths[group];
}

}  // namespace

void reset_optimizer(Stage2State& state) {
  const std::size_t n = state.gs.gaussians().size();
  const int nsh = sh_coefficients(state.gs.sh_degree());
  for (int g = 0; g < 6; ++g) state.adam[g].resize(n * group_width(g, nsh));
  state.grad_accum.assign(n, 0.0);
  state.grad_count.assign(n, 0);
}

Stage2::Stage2(const Dataset& ds, Stage2Config cfg, std::uint64_t seed, EventLog* log)
    : ds_(ds), cfg_(std::move(cfg)), log_(log) {
  cfg_.validate();
  ds_.validate();
  state_.rng.seed(seed);
  state_.extent = camera_extent(ds_);
}

void Stage2::log_event(const std::string& event, const std::string& metrics) {
  if (log_) log_->record(state_.iteration, event, {}, metrics);
}

void Stage2::initialize(const Scene& scene, int subdivision) {
  state_.gs = init_bound_gaussians(scene, subdivision, cfg_.sh_degree, mean_image_color(ds_));
  const std::size_t n = state_.gs.gaussians().size();
  const int nsh = sh_coefficients(cfg_.sh_degree);
  for (int g = 0; g < 6; ++g) state_.adam[g].resize(n * group_width(g, nsh));
  state_.iteration = 0;
  state_.grad_accum.assign(n, 0.0);
  state_.grad_count.assign(n, 0);
  nlohmann::ordered_json m;
  m["gaussians"] = n;
  log_event("bind", m.dump());
}

void Stage2::restore(Stage2State state) { state_ = std::move(state); }

Image Stage2::render(int view) const {
  const auto splats = world_splats(state_.gs);
  return splat_render(splats, state_.gs.sh_degree(), ds_.views.at(view).camera, cfg_.render);
}

DensifyResult Stage2::densify() {
  const std::size_t n = state_.gs.gaussians().size();
  std::vector<double> mean(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    if (state_.grad_count[i] > 0) mean[i] = state_.grad_accum[i] / state_.grad_count[i];
  DensifyConfig dc = cfg_.densify;
  dc.extent = state_.extent;
  const DensifyResult res = densify_and_prune(state_.gs, mean, dc, state_.rng);
  const int nsh = sh_coefficients(state_.gs.sh_degree());
  for (int g = 0; g < 6; ++g) {
    const std::size_t w = group_width(g, nsh);
    ad::AdamState next;
    next.m.assign(res.source.size() * w, 0.0);
    next.v.assign(res.source.size() * w, 0.0);
    next.step = state_.adam[g].step;
    for (std::size_t i = 0; i < res.source.size(); ++i) {
      if (res.source[i] < 0) continue;
      const std::size_t from = static_cast<std::size_t>(res.source[i]) * w;
      std::copy_n(state_.adam[g].m.begin() + from, w, next.m.begin() + i * w);
      std::copy_n(state_.adam[g].v.begin() + from, w, next.v.begin() + i * w);
    }
    state_.adam[g] = std::move(next);
  }
  state_.grad_accum.assign(res.source.size(), 0.0);
  state_.grad_count.assign(res.source.size(), 0);
  nlohmann::ordered_json m;
  m["cloned"] = res.cloned;
  m["split"] = res.split;
  m["pruned"] = res.pruned;
  m["gaussians"] = res.source.size();
  log_event("densify", m.dump());
  return res;
}

void Stage2::adam_update(const SplatGrads& sg, const std::vector<Vec3>& pos_grad) {
  auto& gaussians = state_.gs.gaussians();
  const std::size_t n = gaussians.size();
  const int nsh = sh_coefficients(state_.gs.sh_degree());
  std::array<std::vector<double>, 6> param, grad;
  for (int g = 0; g < 6; ++g) {
    param[g].resize(n * group_width(g, nsh));
    grad[g].resize(n * group_width(g, nsh));
  }
  for (std::size_t i = 0; i < n; ++i) {
    const BoundGaussian& b = gaussians[i];
    const TriangleFrame& f = state_.gs.frame(b.id_k, b.id_t);
    const Vec3 gmu = f.unit * (f.r_t.transpose() * sg.mean[i]) + pos_grad[i];
    const Vec4 qt = rotation_to_quat(f.r_t);
    for (int k = 0; k < 3; ++k) {
      param[kMu][3 * i + k] = b.mu[k];
      grad[kMu][3 * i + k] = gmu[k];
      param[kScale][3 * i + k] = std::log(b.scale[k]);
      grad[kScale][3 * i + k] = sg.scale[i][k] * b.scale[k];
    }
    // world quaternion is Q(R_t) q, linear in q
    for (int k = 0; k < 4; ++k) {
      param[kQuat][4 * i + k] = b.quat[k];
      grad[kQuat][4 * i + k] = sg.quat[i].dot(quat_mul(qt, Vec4::Unit(k)));
    }
    param[kOpacity][i] = logit(b.opacity);
    grad[kOpacity][i] = sg.opacity[i] * b.opacity * (1.0 - b.opacity);
    for (int k = 0; k < 3; ++k) {
      param[kShDc][3 * i + k] = b.sh[k];
      grad[kShDc][3 * i + k] = sg.sh[i][k];
    }
    const std::size_t rest = 3 * (nsh - 1);
    for (std::size_t k = 0; k < rest; ++k) {
      param[kShRest][rest * i + k] = b.sh[3 + k];
      grad[kShRest][rest * i + k] = sg.sh[i][3 + k];
    }
  }
  for (int g = 0; g < 6; ++g)
    for (double v : grad[g])
      if (!std::isfinite(v)) throw Diverged(state_.iteration, "non-finite Gaussian gradient");

  const double t = std::min(1.0, static_cast<double>(state_.iteration) / cfg_.total_iters);
  const double lrs[6] = {cfg_.lr_position * std::pow(cfg_.lr_position_final_ratio, t), cfg_.lr_rotation,
                         cfg_.lr_scaling, cfg_.lr_opacity, cfg_.lr_sh, cfg_.lr_sh / 20.0};
  for (int g = 0; g < 6; ++g) {
    if (param[g].empty()) continue;
    if (state_.adam[g].m.size() != param[g].size()) throw Error("stage 2 Adam state out of sync with Gaussians");
    ad::adam_step(param[g], grad[g], state_.adam[g], lrs[g]);
  }

  for (std::size_t i = 0; i < n; ++i) {
    BoundGaussian& b = gaussians[i];
    Vec4 q;
    for (int k = 0; k < 3; ++k) {
      b.mu[k] = param[kMu][3 * i + k];
      b.scale[k] = std::exp(param[kScale][3 * i + k]);
      b.sh[k] = param[kShDc][3 * i + k];
    }
    for (int k = 0; k < 4; ++k) q[k] = param[kQuat][4 * i + k];
    b.quat = q.norm() > 0.0 ? Vec4(q.normalized()) : Vec4(1, 0, 0, 0);
    b.opacity = sigmoid(param[kOpacity][i]);
    const std::size_t rest = 3 * (nsh - 1);
    for (std::size_t k = 0; k < rest; ++k) b.sh[3 + k] = param[kShRest][rest * i + k];
  }
}

Stage2Stats Stage2::step() {
  const int it = state_.iteration;
  if (it > 0 && it % cfg_.cadence() == 0) densify();
  std::uniform_int_distribution<int> pick(0, static_cast<int>(ds_.views.size()) - 1);
  const View& view = ds_.views[pick(state_.rng)];

  const auto splats = world_splats(state_.gs);
  const int deg = state_.gs.sh_degree();
  const Image img = splat_render(splats, deg, view.camera, cfg_.render);
  Image d_img;
  Stage2Stats st;
  st.l_rgb = rgb_loss(img, view.image, cfg_.lambda_ssim, &d_img);
  std::vector<Vec3> pos_grad;
  st.l_pos = l_pos(state_.gs.gaussians(), PosRegConfig{cfg_.epsilon_pos}, &pos_grad);
  st.total = st.l_rgb + st.l_pos;
  if (!std::isfinite(st.total)) throw Diverged(it, "non-finite stage 2 loss");

  SplatGrads sg;
  splat_backward(splats, deg, view.camera, cfg_.render, d_img, sg);
  for (std::size_t i = 0; i < sg.visible.size(); ++i)
    if (sg.visible[i]) {
      state_.grad_accum[i] += sg.screen_norm[i];
      ++state_.grad_count[i];
    }
  adam_update(sg, pos_grad);
  ++state_.iteration;
  return st;
}

void Stage2::run(const std::function<void(const MetricsRow&)>& on_row) {
  const int every = cfg_.log_interval();
  while (!done()) {
    const Stage2Stats s = step();
    if (state_.iteration % every == 0 || done()) {
      rows_.push_back(measure(s));
      if (on_row) on_row(rows_.back());
    }
  }
}

MetricsRow Stage2::measure(const Stage2Stats& last) const {
  MetricsRow row;
  row.iter = state_.iteration;
  row.l_rec = last.l_rgb;
  row.l_ac = std::numeric_limits<double>::quiet_NaN();
  row.k_active = static_cast<int>(state_.gs.scene().active_object_count());
  const auto splats = world_splats(state_.gs);
  double p = 0.0, s = 0.0;
  for (const auto& v : ds_.views) {
    const Image img = splat_render(splats, state_.gs.sh_degree(), v.camera, cfg_.render);
    p += std::min(100.0, psnr(img, v.image)) / ds_.views.size();
    s += ssim(img, v.image) / ds_.views.size();
  }
  row.psnr = p;
  row.ssim = s;
  return row;
}

}  // namespace sqb
