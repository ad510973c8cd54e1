#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "json.hpp"
#include "sqb/metrics.hpp"
#include "sqb/optimize.hpp"
#include "sqb/tape_ops.hpp"

namespace sqb {

int scaled_iterations(int paper_iters, int total) {
  const long long num = static_cast<long long>(paper_iters) * total;
  return std::max<int>(1, static_cast<int>((num + 49999) / 50000));
}

void Stage1Config::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("stage1." + what);
  };
  require(gamma >= 0.0 && std::isfinite(gamma), "gamma must be >= 0");
  require(total_iters > 0, "total_iters must be positive");
  require(warmup_iters >= 0, "warmup_iters must be >= 0");
  require(warmup() < total_iters || gamma == 0.0, "warmup_iters must be smaller than total_iters");
  require(structure_cadence > 0, "structure_cadence must be positive");
  require(beta > 0.0, "beta must be positive");
  require(xi >= 0, "xi must be >= 0");
  require(initial_k > 0, "initial_k must be positive");
  require(prune_alpha > 0.0 && prune_alpha < 1.0, "prune_alpha must lie in (0, 1)");
  require(subdivision >= 0 && subdivision <= 5, "subdivision must lie in [0, 5]");
  require(batch_views > 0, "batch_views must be positive");
  require(structure_views > 0, "structure_views must be positive");
  require(min_cluster_size >= 2, "min_cluster_size must be >= 2");
  require(lr_alpha > 0 && lr_rotation > 0 && lr_translation > 0 && lr_scale > 0 && lr_shape > 0,
          "learning rates must be positive");
  require(lr_final_ratio > 0.0 && lr_final_ratio <= 1.0, "lr_final_ratio must lie in (0, 1]");
  require(init_alpha > 0.0 && init_alpha <= 1.0, "init_alpha must lie in (0, 1]");
  require(init_tilt_deg >= 0.0 && init_tilt_deg <= 180.0, "init_tilt_deg must lie in [0, 180]");
  require(chamfer_samples > 0, "chamfer_samples must be positive");
  try {
    render.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("stage1.render: ") + e.what());
  }
}

int Stage1Config::warmup() const {
  return scale_schedule ? (warmup_iters == 0 ? 0 : scaled_iterations(warmup_iters, total_iters)) : warmup_iters;
}
int Stage1Config::cadence() const {
  return scale_schedule ? scaled_iterations(structure_cadence, total_iters) : structure_cadence;
}
int Stage1Config::log_interval() const { return log_every > 0 ? log_every : cadence(); }

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsRow> rows) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "iter,l_rec,l_ac,K_active,chamfer,psnr,ssim\n";
  out << std::setprecision(17);
  auto field = [&](double v) {
    out << ',';
    if (std::isfinite(v)) out << v;
  };
  for (const auto& r : rows) {
    out << r.iter;
    field(r.l_rec);
    field(r.l_ac);
    out << ',' << r.k_active;
    field(r.chamfer);
    field(r.psnr);
    field(r.ssim);
    out << '\n';
  }
}

HullBox visual_hull_box(const Dataset& ds, int res) {
  if (ds.views.empty()) throw ConfigError("dataset has no views");
  // point closest to every optical axis
  Mat3 a = Mat3::Zero();
  Vec3 b = Vec3::Zero();
  double mean_dist = 0.0;
  for (const auto& v : ds.views) {
    const Vec3 c = v.camera.center();
    const Vec3 d = v.camera.view.block<1, 3>(2, 0).transpose().normalized();
    const Mat3 p = Mat3::Identity() - d * d.transpose();
    a += p;
    b += p * c;
  }
  Vec3 centre = a.fullPivLu().isInvertible() ? Vec3(a.fullPivLu().solve(b)) : Vec3::Zero();
  double half = std::numeric_limits<double>::infinity();
  for (const auto& v : ds.views) {
    const double dist = (v.camera.center() - centre).norm();
    mean_dist += dist / ds.views.size();
    const double tan_half = std::max(v.camera.width / (2.0 * v.camera.fx), v.camera.height / (2.0 * v.camera.fy));
    half = std::min(half, dist * tan_half);
  }
  if (!std::isfinite(half) || half <= 0.0) half = 0.5 * mean_dist;
  const double step = 2.0 * half / res;
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  bool any = false;
  for (int i = 0; i < res; ++i)
    for (int j = 0; j < res; ++j)
      for (int k = 0; k < res; ++k) {
        const Vec3 p = centre + Vec3(-half + (i + 0.5) * step, -half + (j + 0.5) * step, -half + (k + 0.5) * step);
        bool inside = true;
        for (const auto& v : ds.views) {
          const Vec3 pc = v.camera.to_camera(p);
          if (pc.z() <= v.camera.near) {
            inside = false;
            break;
          }
          const Vec2 px = project_point(p, v.camera);
          const int x = static_cast<int>(std::floor(px.x())), y = static_cast<int>(std::floor(px.y()));
          if (x < 0 || y < 0 || x >= v.camera.width || y >= v.camera.height ||
              v.silhouette.data[static_cast<std::size_t>(y) * v.camera.width + x] < 0.5) {
            inside = false;
            break;
          }
        }
        if (!inside) continue;
        any = true;
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
      }
  if (!any) throw ConfigError("silhouettes have an empty visual hull");
  return {lo - Vec3::Constant(0.5 * step), hi + Vec3::Constant(0.5 * step)};
}

std::vector<Vec3> sample_scene_surface(const Scene& scene, const IcosphereTemplate& tpl, std::size_t n,
                                       std::mt19937_64& rng) {
  std::vector<PrimitiveMesh> meshes;
  std::vector<const Superquadric*> sqs;
  for (const auto& p : scene.primitives())
    if (p.is_object() && p.sq.alpha() > 0.0) {
      meshes.push_back(deform(p.sq, tpl));
      sqs.push_back(&p.sq);
    }
  std::vector<Vec3> pts;
  if (meshes.empty()) return pts;
  std::vector<double> area;
  std::vector<std::pair<std::size_t, std::size_t>> where;
  for (std::size_t m = 0; m < meshes.size(); ++m) {
    const auto& faces = meshes[m].face_list();
    for (std::size_t f = 0; f < faces.size(); ++f) {
      const auto& v = meshes[m].world_vertices;
      area.push_back(0.5 * (v[faces[f][1]] - v[faces[f][0]]).cross(v[faces[f][2]] - v[faces[f][0]]).norm());
      where.emplace_back(m, f);
    }
  }
  std::discrete_distribution<std::size_t> pick(area.begin(), area.end());
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  pts.reserve(n);
  for (std::size_t guard = 0; pts.size() < n && guard < 50 * n; ++guard) {
    const auto [m, f] = where[pick(rng)];
    const auto& face = meshes[m].face_list()[f];
    const auto& v = meshes[m].world_vertices;
    double r1 = std::sqrt(uni(rng)), r2 = uni(rng);
    const Vec3 p = (1 - r1) * v[face[0]] + r1 * (1 - r2) * v[face[1]] + r1 * r2 * v[face[2]];
    bool hidden = false;
    for (std::size_t o = 0; o < sqs.size() && !hidden; ++o) hidden = o != m && sqs[o]->contains(p);
    if (!hidden) pts.push_back(p);
  }
  return pts;
}

double silhouette_loss(std::span<const Superquadric> prims, const View& view, const IcosphereTemplate& tpl,
                       const SoftRenderConfig& cfg, std::vector<Superquadric::Params>* grads) {
  if (prims.empty()) {
    double s = 0.0;
    for (double t : view.silhouette.data) s += t * t;
    if (grads) grads->clear();
    return s / view.silhouette.data.size();
  }
  ad::Tape tape;
  std::vector<ad::Var> leaves, pixels;
  std::vector<std::shared_ptr<const PrimitiveMesh>> meshes;
  std::vector<Vec3> colors(prims.size(), Vec3::Constant(0.5));
  for (const auto& sq : prims) {
    const auto p = sq.params();
    leaves.push_back(tape.leaf(std::vector<double>(p.begin(), p.end())));
    auto mesh = std::make_shared<const PrimitiveMesh>(deform(sq, tpl));
    const ad::Var verts = deform_op(leaves.back(), sq, tpl);
    pixels.push_back(project_op(verts, mesh, view.camera));
    meshes.push_back(std::move(mesh));
  }
  const RenderNode node = render_op(pixels, leaves, meshes, colors, view.camera, cfg);
  const ad::Var loss = ad::mse(node.silhouette, view.silhouette.data);
  tape.backward(loss);
  if (grads) {
    grads->assign(prims.size(), {});
    for (std::size_t i = 0; i < prims.size(); ++i)
      std::copy(leaves[i].grad().begin(), leaves[i].grad().end(), (*grads)[i].begin());
  }
  return loss.scalar();
}

namespace {

constexpr std::array<std::pair<std::size_t, std::size_t>, 5> kGroups = {{
    {Superquadric::kAlpha, 1},
    {Superquadric::kRot, 6},
    {Superquadric::kTrans, 3},
    {Superquadric::kScale, 3},
    {Superquadric::kEps, 2},
}};

struct ObjectRender {
  std::vector<PrimitiveId> ids;
  std::vector<std::shared_ptr<const PrimitiveMesh>> meshes;
  std::vector<RenderPrimitive> prims;
  RenderOutput out;
};

ObjectRender render_objects(const Scene& scene, const IcosphereTemplate& tpl, const Camera& cam,
                            const SoftRenderConfig& cfg) {
  ObjectRender r;
  for (const auto& p : scene.primitives()) {
    if (!p.is_object() || p.sq.alpha() <= 0.0) continue;
    r.ids.push_back(p.sq.id());
    r.meshes.push_back(std::make_shared<const PrimitiveMesh>(deform(p.sq, tpl)));
    RenderPrimitive rp;
    rp.mesh = r.meshes.back().get();
    rp.projected = project_vertices(*rp.mesh, cam, true);
    rp.alpha = p.sq.alpha();
    rp.color = p.color;
    r.prims.push_back(std::move(rp));
  }
  r.out = render(r.prims, cam, cfg);
  return r;
}

std::string params_json(const Scene& scene) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& p : scene.primitives()) {
    const auto a = p.sq.params();
    j.push_back({{"id", p.sq.id()}, {"params", std::vector<double>(a.begin(), a.end())}});
  }
  return j.dump();
}

}  // namespace

RenderOutput render_scene_objects(const Scene& scene, const IcosphereTemplate& tpl, const Camera& cam,
                                  const SoftRenderConfig& cfg) {
  return render_objects(scene, tpl, cam, cfg).out;
}

double scene_chamfer(const Scene& scene, const IcosphereTemplate& tpl, std::span<const Vec3> gt, std::size_t samples,
                     std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto pts = sample_scene_surface(scene, tpl, samples, rng);
  if (pts.empty() || gt.empty()) return std::numeric_limits<double>::quiet_NaN();
  return chamfer(gt, pts);
}

Stage1::Stage1(const Dataset& ds, const AttentionProvider* provider, Stage1Config cfg, std::uint64_t seed,
               EventLog* log)
    : ds_(ds), provider_(provider), cfg_(std::move(cfg)), log_(log) {
  cfg_.validate();
  ds_.validate();
  if (!provider_ && (cfg_.gamma > 0.0 || cfg_.enable_split || cfg_.enable_fuse))
    throw MissingPrior("stage 1 needs an attention provider for the centering term and split/fuse");
  tpl_ = build_icosphere(cfg_.subdivision);
  state_.rng.seed(seed);
  for (const auto& v : ds_.views) embeddings_.push_back(embed_view(v.id, v.image));
}

void Stage1::initialize() {
  const HullBox box = visual_hull_box(ds_);
  const Vec3 c = box.center(), h = box.half_extent();
  state_.hull_radius = h.norm();
  Scene scene;
  std::uniform_real_distribution<double> uni(-0.5, 0.5);
  std::normal_distribution<double> gauss;
  const double shrink = 0.8 / std::cbrt(static_cast<double>(cfg_.initial_k));
  std::vector<PrimitiveId> ids;
  for (int k = 0; k < cfg_.initial_k; ++k) {
    const Vec3 t = c + h.cwiseProduct(Vec3(uni(state_.rng), uni(state_.rng), uni(state_.rng)));
    // small tilt only: a free orientation can turn the long axis away from a
    // thin part, which the silhouette term cannot recover from
    const Vec3 axis(gauss(state_.rng), gauss(state_.rng), gauss(state_.rng));
    const double angle = cfg_.init_tilt_deg * M_PI / 180.0 * uni(state_.rng);
    const Eigen::Quaterniond q(Eigen::AngleAxisd(angle, axis.normalized()));
    const Vec3 jitter(1.0 + 0.4 * uni(state_.rng), 1.0 + 0.4 * uni(state_.rng), 1.0 + 0.4 * uni(state_.rng));
    const Vec3 s = (shrink * h).cwiseProduct(jitter).cwiseMax(Vec3::Constant(Superquadric::kMinScale));
    ids.push_back(scene.add(Superquadric(cfg_.init_alpha, matrix_to_rot6d(q.toRotationMatrix()), t, s, Vec2(1, 1), 0),
                            PrimitiveRole::kObject, Vec3::Constant(0.5)));
  }
  if (cfg_.background_primitives) {
    const double r = state_.hull_radius;
    scene.add(Superquadric(1.0, matrix_to_rot6d(Mat3::Identity()), c, Vec3::Constant(3.0 * r), Vec2(1, 1), 0),
              PrimitiveRole::kDome, Vec3::Constant(0.5));
    const Vec3 up = ds_.up.normalized();
    double level = std::numeric_limits<double>::infinity();
    for (int corner = 0; corner < 8; ++corner) {
      const Vec3 p((corner & 1) ? box.hi.x() : box.lo.x(), (corner & 2) ? box.hi.y() : box.lo.y(),
                   (corner & 4) ? box.hi.z() : box.lo.z());
      level = std::min(level, up.dot(p));
    }
    const Vec3 centre = c + (level - up.dot(c)) * up;
    const Vec3 any = std::abs(up.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitZ();
    const Vec3 ex = up.cross(any).normalized();
    Mat3 rot;
    rot.col(0) = ex;
    rot.col(1) = up;
    rot.col(2) = ex.cross(up);
    scene.add(Superquadric(1.0, matrix_to_rot6d(rot), centre, Vec3(3.0 * r, 0.01 * r, 3.0 * r), Vec2(0.1, 0.1), 0),
              PrimitiveRole::kGround, Vec3::Constant(0.5));
  }
  state_.scene = std::move(scene);
  state_.adam.clear();
  state_.iteration = 0;
  log_event("init", ids, "");
}

void Stage1::set_scene(Scene scene, double hull_radius) {
  state_.scene = std::move(scene);
  state_.hull_radius = hull_radius;
  state_.adam.clear();
}

void Stage1::restore(Stage1State state) { state_ = std::move(state); }

void Stage1::log_event(const std::string& event, std::span<const PrimitiveId> ids, const std::string& metrics) {
  if (log_) log_->record(state_.iteration, event, ids, metrics);
}

std::vector<int> Stage1::sample_views(int count) {
  const int n = static_cast<int>(ds_.views.size());
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  count = std::min(count, n);
  for (int i = 0; i < count; ++i) {
    std::uniform_int_distribution<int> pick(i, n - 1);
    std::swap(idx[i], idx[pick(state_.rng)]);
  }
  idx.resize(count);
  return idx;
}

StepStats Stage1::forward_backward(std::span<const int> views, bool with_ac, const std::vector<PrimitiveId>& trainable,
                                   std::map<PrimitiveId, Superquadric::Params>* grads) const {
  std::vector<const Primitive*> objects;
  for (const auto& p : state_.scene.primitives())
    if (p.is_object() && p.sq.alpha() > 0.0) objects.push_back(&p);
  StepStats stats;
  if (objects.empty()) {
    for (int v : views) stats.l_rec += silhouette_loss({}, ds_.views[v], tpl_, cfg_.render) / views.size();
    stats.total = stats.l_rec;
    return stats;
  }
  ad::Tape tape;
  std::vector<ad::Var> leaves, verts;
  std::vector<std::shared_ptr<const PrimitiveMesh>> meshes;
  std::vector<Vec3> colors;
  for (const Primitive* p : objects) {
    const auto a = p->sq.params();
    std::vector<double> value(a.begin(), a.end());
    const bool train = std::find(trainable.begin(), trainable.end(), p->sq.id()) != trainable.end();
    leaves.push_back(train ? tape.leaf(std::move(value)) : tape.constant(std::move(value)));
    meshes.push_back(std::make_shared<const PrimitiveMesh>(deform(p->sq, tpl_)));
    verts.push_back(deform_op(leaves.back(), p->sq, tpl_));
    colors.push_back(p->color);
  }
  std::vector<ad::Var> totals;
  for (int vi : views) {
    const View& view = ds_.views[vi];
    std::vector<ad::Var> pixels;
    for (std::size_t i = 0; i < objects.size(); ++i) pixels.push_back(project_op(verts[i], meshes[i], view.camera));
    const RenderNode node = render_op(pixels, leaves, meshes, colors, view.camera, cfg_.render);
    const ad::Var l_rec = ad::mse(node.silhouette, view.silhouette.data);
    stats.l_rec += l_rec.scalar() / views.size();
    ad::Var total = l_rec;
    if (with_ac) {
      std::vector<ad::Var> terms;
      const double unit = cfg_.ac_normalized ? 1.0 / std::hypot(view.camera.width, view.camera.height) : 1.0;
      for (std::size_t i = 0; i < objects.size(); ++i) {
        PromptSet prompts;
        try {
          prompts = prompts_for_primitive(node.state->out, node.state->prims, i, view.camera, {cfg_.max_prompts});
        } catch (const EmptyPrompt&) {
          continue;
        }
        const ACResult ac = ac_loss_for_primitive(prompts, embeddings_[vi], *provider_, {cfg_.min_cluster_size});
        if (ac.outliers.empty()) continue;
        terms.push_back(ad::scale(ac_loss_var(gather_points(pixels[i], prompts.vertices), ac), unit));
      }
      if (!terms.empty()) {
        const ad::Var l_ac = ad::sum(ad::concat(terms));
        stats.l_ac += l_ac.scalar() / views.size();
        total = total + cfg_.gamma * l_ac;
      }
    }
    totals.push_back(total);
  }
  const ad::Var loss = ad::scale(ad::sum(ad::concat(totals)), 1.0 / views.size());
  stats.total = loss.scalar();
  if (!std::isfinite(stats.total))
    throw Diverged(state_.iteration, "non-finite loss; parameters " + params_json(state_.scene));
  if (grads && !trainable.empty()) {
    tape.backward(loss);
    for (std::size_t i = 0; i < objects.size(); ++i) {
      if (!tape.requires_grad(leaves[i])) continue;
      Superquadric::Params g{};
      const auto& src = leaves[i].grad();
      for (std::size_t k = 0; k < g.size(); ++k) {
        if (!std::isfinite(src[k]))
          throw Diverged(state_.iteration, "non-finite gradient; parameters " + params_json(state_.scene));
        g[k] = src[k];
      }
      (*grads)[objects[i]->sq.id()] = g;
    }
  }
  return stats;
}

void Stage1::adam_update(PrimitiveId id, const Superquadric::Params& grad, int step_index) {
  Primitive& prim = state_.scene.at(id);
  PrimitiveAdam& adam = state_.adam[id];
  auto params = prim.sq.params();
  const double decay = std::pow(cfg_.lr_final_ratio, std::min(1.0, static_cast<double>(step_index) / cfg_.total_iters));
  const double r = state_.hull_radius;
  const double lrs[5] = {cfg_.lr_alpha, cfg_.lr_rotation, cfg_.lr_translation * r, cfg_.lr_scale * r, cfg_.lr_shape};
  for (std::size_t g = 0; g < kGroups.size(); ++g) {
    const auto [offset, count] = kGroups[g];
    if (adam[g].m.size() != count) adam[g].resize(count);
    ad::adam_step(std::span<double>(params.data() + offset, count),
                  std::span<const double>(grad.data() + offset, count), adam[g], lrs[g] * decay);
  }
  prim.sq = Superquadric::from_params(params, id);
}

StepStats Stage1::step() {
  const int it = state_.iteration;
  if (it > 0 && it % cfg_.cadence() == 0) structure_step();
  const std::vector<int> views = sample_views(cfg_.batch_views);
  const bool with_ac = provider_ && cfg_.gamma > 0.0 && it >= cfg_.warmup();
  std::vector<PrimitiveId> trainable;
  for (const auto& p : state_.scene.primitives())
    if (p.is_object() && p.sq.alpha() > 0.0) trainable.push_back(p.sq.id());
  std::map<PrimitiveId, Superquadric::Params> grads;
  const StepStats stats = forward_backward(views, with_ac, trainable, &grads);
  for (const auto& [id, g] : grads) adam_update(id, g, it);
  ++state_.iteration;
  return stats;
}

void Stage1::run(const std::function<void(const MetricsRow&)>& on_row) {
  const int every = cfg_.log_interval();
  while (!done()) {
    const StepStats s = step();
    if (state_.iteration % every == 0 || done()) {
      rows_.push_back(measure(s));
      if (on_row) on_row(rows_.back());
    }
  }
}

void Stage1::fuse_warmup(Scene& scene, PrimitiveId id, int steps) {
  (void)scene;  // the optimizer always works on its own scene
  state_.adam.erase(id);
  for (int s = 0; s < steps; ++s) {
    const std::vector<int> views = sample_views(1);
    std::map<PrimitiveId, Superquadric::Params> grads;
    forward_backward(views, false, {id}, &grads);
    const auto g = grads.find(id);
    if (g != grads.end()) adam_update(id, g->second, state_.iteration);
  }
}

int Stage1::structure_step() {
  int events = 0;
  const ACOptions ac_opts{cfg_.min_cluster_size};
  const PromptOptions prompt_opts{cfg_.max_prompts};
  if (provider_ && cfg_.enable_split) {
    const std::vector<int> views = sample_views(cfg_.structure_views);
    std::vector<ObjectRender> renders;
    for (int v : views) renders.push_back(render_objects(state_.scene, tpl_, ds_.views[v].camera, cfg_.render));
    std::vector<SplitDecision> decisions;
    const std::vector<PrimitiveId> ids = renders.empty() ? std::vector<PrimitiveId>{} : renders.front().ids;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      std::vector<PrimitiveViewEvidence> evidence;
      for (std::size_t k = 0; k < views.size(); ++k) {
        const ObjectRender& r = renders[k];
        try {
          PrimitiveViewEvidence ev;
          ev.view = ds_.views[views[k]].id;
          ev.prompts = prompts_for_primitive(r.out, r.prims, i, ds_.views[views[k]].camera, prompt_opts);
          ev.ac = ac_loss_for_primitive(ev.prompts, embeddings_[views[k]], *provider_, ac_opts);
          evidence.push_back(std::move(ev));
        } catch (const EmptyPrompt&) {
        }
      }
      if (auto d = check_split(*renders.front().meshes[i], evidence, cfg_.beta)) decisions.push_back(*d);
    }
    for (const auto& d : decisions) {
      const auto [a, b] = apply_split(state_.scene, d, tpl_);
      const PrimitiveId ev_ids[3] = {d.target_id, a, b};
      nlohmann::ordered_json m{{"distance", d.centroid_distance}, {"threshold", d.threshold}, {"view", d.view}};
      log_event("split", ev_ids, m.dump());
      ++events;
    }
  }
  if (provider_ && cfg_.enable_fuse) {
    std::set<PrimitiveId> touched;
    const std::vector<int> views = sample_views(cfg_.structure_views);
    while (true) {
      std::vector<FuseCandidate> candidates;
      std::vector<ViewPromptSets> sets;
      for (int v : views) {
        const ObjectRender r = render_objects(state_.scene, tpl_, ds_.views[v].camera, cfg_.render);
        if (candidates.empty())
          for (std::size_t i = 0; i < r.ids.size(); ++i)
            if (!touched.count(r.ids[i])) candidates.push_back({r.ids[i], r.meshes[i]->centroid()});
        sets.push_back({ds_.views[v].id, embeddings_[v],
                        visible_point_prompts(r.out, r.prims, ds_.views[v].camera, prompt_opts)});
      }
      const auto d = check_fuse(candidates, sets, *provider_, ac_opts);
      if (!d) break;
      const PrimitiveId fused = apply_fuse(state_.scene, *d, cfg_.xi,
                                           [this](Scene& s, PrimitiveId id, int n) { fuse_warmup(s, id, n); });
      touched.insert({d->id_a, d->id_b, fused});
      const PrimitiveId ev_ids[3] = {d->id_a, d->id_b, fused};
      nlohmann::ordered_json m{{"checked_views", d->checked_views}, {"clusters", d->cluster_count_after_union}};
      log_event("fuse", ev_ids, m.dump());
      ++events;
    }
  }
  const std::vector<PrimitiveId> removed = prune_transparent(state_.scene, cfg_.prune_alpha);
  for (PrimitiveId id : removed) state_.adam.erase(id);
  if (!removed.empty()) {
    log_event("prune", removed, "");
    ++events;
  }
  return events;
}

StepStats Stage1::evaluate(int view, bool with_ac) const {
  const int v[1] = {view};
  return forward_backward(v, with_ac && provider_ != nullptr, {}, nullptr);
}

MetricsRow Stage1::measure(const StepStats& last) const {
  MetricsRow row;
  row.iter = state_.iteration;
  row.l_rec = last.l_rec;
  row.l_ac = last.l_ac;
  row.k_active = static_cast<int>(state_.scene.active_object_count());
  if (!ds_.gt_points.empty())
    row.chamfer = scene_chamfer(state_.scene, tpl_, ds_.gt_points, static_cast<std::size_t>(cfg_.chamfer_samples),
                                0x5eed + static_cast<std::uint64_t>(state_.iteration));
  double p = 0.0, s = 0.0;
  for (const auto& v : ds_.views) {
    const ObjectRender r = render_objects(state_.scene, tpl_, v.camera, cfg_.render);
    p += std::min(100.0, psnr(r.out.silhouette, v.silhouette)) / ds_.views.size();
    s += ssim(r.out.silhouette, v.silhouette) / ds_.views.size();
  }
  row.psnr = p;
  row.ssim = s;
  return row;
}

double Stage1::mean_silhouette_iou() const {
  double iou = 0.0;
  for (const auto& v : ds_.views) {
    const ObjectRender r = render_objects(state_.scene, tpl_, v.camera, cfg_.render);
    iou += mask_iou(r.out.silhouette, v.silhouette) / ds_.views.size();
  }
  return iou;
}

}  // namespace sqb
