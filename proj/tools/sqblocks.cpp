// sqblocks command-line front end.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>

#include "CLI11.hpp"
#include "sqb/config.hpp"
#include "sqb/io.hpp"
#include "sqb/metrics.hpp"
#include "sqb/semantics.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fs = std::filesystem;
using namespace sqb;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;
constexpr int kExitMissingPrior = 4;

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> threads;
  std::string dataset;
  std::string checkpoint;
};

std::string quoted(const std::string& s) { return nlohmann::json(s).dump(); }

ProjectConfig resolve(const Common& c, const nlohmann::ordered_json* base = nullptr) {
  std::vector<std::string> overrides;
  // a checkpoint's own config is the starting point; the file and flags refine it
  std::string text = base ? base->dump(2) : std::string();
  std::string source = base ? "checkpoint config" : "defaults";
  if (!c.config.empty()) {
    std::ifstream in(c.config);
    if (!in) throw ConfigError("cannot open config " + c.config);
    std::ostringstream ss;
    ss << in.rdbuf();
    if (base) {
      // checked alone first so errors carry the file's line numbers, then
      // flattened into overrides on top of the checkpoint config
      parse_config(ss.str(), c.config);
      nlohmann::json j = nlohmann::json::parse(ss.str());
      std::function<void(const nlohmann::json&, const std::string&)> walk = [&](const nlohmann::json& n,
                                                                               const std::string& p) {
        if (n.is_object()) {
          for (const auto& [k, v] : n.items()) walk(v, p.empty() ? k : p + "." + k);
        } else {
          overrides.push_back(p + "=" + n.dump());
        }
      };
      walk(j, "");
    } else {
      text = ss.str();
      source = c.config;
    }
  }
  overrides.insert(overrides.end(), c.sets.begin(), c.sets.end());
  if (c.seed) overrides.push_back("seed=" + std::to_string(*c.seed));
  if (!c.out.empty()) overrides.push_back("out=" + quoted(c.out));
  if (c.threads) overrides.push_back("threads=" + std::to_string(*c.threads));
  if (!c.dataset.empty()) overrides.push_back("dataset=" + quoted(c.dataset));
  ProjectConfig cfg = parse_config(text, source, overrides);
#ifdef _OPENMP
  if (cfg.threads > 0) omp_set_num_threads(cfg.threads);
#endif
  return cfg;
}

Dataset require_dataset(const ProjectConfig& cfg) {
  if (cfg.dataset.empty()) throw ConfigError("no dataset given (--dataset or \"dataset\" in the config)");
  if (!fs::is_directory(cfg.dataset)) throw ConfigError("dataset directory " + cfg.dataset.string() + " not found");
  return load_dataset(cfg.dataset);
}

std::unique_ptr<AttentionProvider> make_provider(const ProjectConfig& cfg, const Dataset& ds) {
  if (cfg.provider.mode == "files") {
    if (!fs::is_directory(cfg.provider.dir))
      throw MissingPrior("attention map directory " + cfg.provider.dir.string() + " not found");
    return std::make_unique<FileAttentionProvider>(cfg.provider.dir);
  }
  if (!ds.has_parts()) throw MissingPrior("provider \"oracle\" needs part masks (masks/NNN.png) in the dataset");
  std::vector<LabelImage> masks;
  for (const auto& v : ds.views) masks.push_back(*v.parts);
  return std::make_unique<SyntheticOracle>(std::move(masks), cfg.provider.blur_sigma);
}

bool provider_needed(const Stage1Config& s) { return s.gamma > 0.0 || s.enable_split || s.enable_fuse; }

std::string view_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%03d.png", i);
  return buf;
}

void print_row(const char* stage, const MetricsRow& r) {
  std::printf("[%s] iter %d l_rec %.6g K %d chamfer %.6g psnr %.4g ssim %.4g\n", stage, r.iter, r.l_rec, r.k_active,
              r.chamfer, r.psnr, r.ssim);
  std::fflush(stdout);
}

Checkpoint load_required_checkpoint(const Common& c) {
  if (c.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  return load_checkpoint(c.checkpoint);
}

int cmd_synth(const Common& c, const std::string& shape) {
  Common cc = c;
  if (!shape.empty()) cc.sets.push_back("synth.shape=" + quoted(shape));
  const ProjectConfig cfg = resolve(cc);
  SynthRecipe r = cfg.synth;
  r.seed = cfg.seed;
  const Dataset ds = synthesize(r);
  save_dataset(cfg.out, ds);
  std::printf("wrote %zu views of '%s' to %s\n", ds.views.size(), r.shape.c_str(), cfg.out.string().c_str());
  return kExitOk;
}

int cmd_fit(const Common& c, const std::string& resume) {
  std::optional<Checkpoint> prev;
  if (!resume.empty()) prev = load_checkpoint(resume);
  const ProjectConfig cfg = resolve(c, prev ? &prev->config : nullptr);
  const Dataset ds = require_dataset(cfg);
  std::unique_ptr<AttentionProvider> provider;
  if (provider_needed(cfg.stage1)) provider = make_provider(cfg, ds);
  fs::create_directories(cfg.out);
  EventLog log(cfg.out / "events.jsonl");
  Stage1 s1(ds, provider.get(), cfg.stage1, cfg.seed, &log);
  if (prev)
    s1.restore(prev->stage1);
  else
    s1.initialize();
  s1.run([](const MetricsRow& r) { print_row("fit", r); });
  write_metrics_csv(cfg.out / "metrics.csv", s1.metrics());

  Checkpoint ck;
  ck.stage = "stage1";
  ck.config = config_to_json(cfg);
  ck.seed = cfg.seed;
  ck.subdivision = cfg.stage1.subdivision;
  ck.stage1 = s1.state();
  save_checkpoint(cfg.out / "checkpoint.sqb", ck);
  std::ofstream(cfg.out / "scene.json") << scene_to_json(s1.state().scene).dump(2) << '\n';
  std::printf("stage 1 done: %zu active primitives, checkpoint %s\n", s1.state().scene.active_object_count(),
              (cfg.out / "checkpoint.sqb").string().c_str());
  return kExitOk;
}

int cmd_bind(const Common& c) {
  Checkpoint ck = load_required_checkpoint(c);
  const ProjectConfig cfg = resolve(c, &ck.config);
  const Dataset ds = require_dataset(cfg);
  fs::create_directories(cfg.out);
  EventLog log(cfg.out / "events.jsonl");
  Stage2 s2(ds, cfg.stage2, cfg.seed, &log);
  if (ck.stage2)
    s2.restore(*ck.stage2);
  else
    s2.initialize(ck.stage1.scene, ck.subdivision);
  s2.run([](const MetricsRow& r) { print_row("bind", r); });
  write_metrics_csv(cfg.out / "metrics.csv", s2.metrics());

  ck.stage = "stage2";
  ck.config = config_to_json(cfg);
  ck.stage2 = s2.state();
  save_checkpoint(cfg.out / "checkpoint.sqb", ck);
  write_splat_ply(cfg.out / "splats.ply", s2.state().gs);
  std::printf("stage 2 done: %zu Gaussians, checkpoint %s\n", s2.state().gs.gaussians().size(),
              (cfg.out / "checkpoint.sqb").string().c_str());
  return kExitOk;
}

/// Renders every dataset camera; splats for stage-2 checkpoints, soft
/// silhouettes otherwise.
/// `masks` (splats only) receives the compositing weight of object Gaussians,
/// leaving out the background dome and ground.
std::vector<Image> render_all(const Checkpoint& ck, const ProjectConfig& cfg, const Dataset& ds,
                              const GaussianScene* gs, std::vector<Image>* masks = nullptr) {
  std::vector<Image> out;
  if (gs) {
    const auto splats = world_splats(*gs);
    std::vector<std::uint8_t> object;
    for (const auto& g : gs->gaussians()) object.push_back(gs->scene().at(g.id_k).is_object() ? 1 : 0);
    for (const auto& v : ds.views) {
      Image mask;
      SplatExtras ex;
      if (masks) {
        ex.group = &object;
        ex.group_weight = &mask;
      }
      out.push_back(splat_render(splats, gs->sh_degree(), v.camera, cfg.stage2.render, ex));
      if (masks) masks->push_back(std::move(mask));
    }
  } else {
    const IcosphereTemplate tpl = build_icosphere(ck.subdivision);
    for (const auto& v : ds.views)
      out.push_back(render_scene_objects(ck.stage1.scene, tpl, v.camera, cfg.stage1.render).silhouette);
  }
  return out;
}

/// Image metrics of `images` against the dataset targets (RGB for splats,
/// silhouettes for stage-1 renders), as one metrics row.
MetricsRow image_row(const std::vector<Image>& images, const Dataset& ds, bool splats, int iter, const Scene& scene) {
  MetricsRow row;
  row.iter = iter;
  row.l_rec = row.l_ac = std::numeric_limits<double>::quiet_NaN();
  row.k_active = static_cast<int>(scene.active_object_count());
  row.psnr = row.ssim = 0.0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image& target = splats ? ds.views[i].image : ds.views[i].silhouette;
    row.psnr += std::min(100.0, psnr(images[i], target)) / images.size();
    row.ssim += ssim(images[i], target) / images.size();
  }
  return row;
}

void write_report(const fs::path& out, const MetricsRow& row, const std::string& event,
                  std::span<const PrimitiveId> ids, const nlohmann::ordered_json& extra) {
  write_metrics_csv(out / "metrics.csv", std::vector<MetricsRow>{row});
  EventLog log(out / "events.jsonl");
  log.record(row.iter, event, ids, extra.dump());
}

int iteration_of(const Checkpoint& ck) { return ck.stage2 ? ck.stage2->iteration : ck.stage1.iteration; }
const Scene& scene_of(const Checkpoint& ck) { return ck.stage2 ? ck.stage2->gs.scene() : ck.stage1.scene; }

int cmd_render(const Common& c) {
  const Checkpoint ck = load_required_checkpoint(c);
  const ProjectConfig cfg = resolve(c, &ck.config);
  const Dataset ds = require_dataset(cfg);
  const auto images = render_all(ck, cfg, ds, ck.stage2 ? &ck.stage2->gs : nullptr);
  fs::create_directories(cfg.out / "renders");
  for (std::size_t i = 0; i < images.size(); ++i) write_png(cfg.out / "renders" / view_name(ds.views[i].id), images[i]);
  const MetricsRow row = image_row(images, ds, ck.stage2.has_value(), iteration_of(ck), scene_of(ck));
  write_report(cfg.out, row, "render", {}, {{"views", images.size()}, {"psnr", row.psnr}, {"ssim", row.ssim}});
  std::printf("rendered %zu views to %s\n", images.size(), (cfg.out / "renders").string().c_str());
  return kExitOk;
}

int cmd_edit(const Common& c, const std::string& edit_file) {
  Checkpoint ck = load_required_checkpoint(c);
  const ProjectConfig cfg = resolve(c, &ck.config);
  if (!ck.stage2) throw ConfigError("edit needs a stage-2 checkpoint (run bind first)");
  if (edit_file.empty()) throw ConfigError("--edit is required");
  const EditSpec spec = read_edit_file(edit_file);
  const Dataset ds = require_dataset(cfg);
  GaussianScene edited = ck.stage2->gs;
  apply_edit(edited, spec);  // before any output so a bad id writes nothing
  std::vector<Image> mask_before, mask_after;
  const auto before = render_all(ck, cfg, ds, &ck.stage2->gs, &mask_before);
  const auto after = render_all(ck, cfg, ds, &edited, &mask_after);
  for (const char* d : {"before", "after", "before_mask", "after_mask"}) fs::create_directories(cfg.out / d);
  for (std::size_t i = 0; i < before.size(); ++i) {
    const auto name = view_name(ds.views[i].id);
    write_png(cfg.out / "before" / name, before[i]);
    write_png(cfg.out / "after" / name, after[i]);
    write_png(cfg.out / "before_mask" / name, mask_before[i]);
    write_png(cfg.out / "after_mask" / name, mask_after[i]);
  }
  const std::size_t kept = edited.gaussians().size();
  const std::size_t removed = ck.stage2->gs.gaussians().size() - kept;
  ck.stage2->gs = std::move(edited);
  // optimizer statistics no longer line up with a pruned Gaussian list
  reset_optimizer(*ck.stage2);
  save_checkpoint(cfg.out / "checkpoint.sqb", ck);
  write_splat_ply(cfg.out / "splats.ply", ck.stage2->gs);

  std::vector<PrimitiveId> ids;
  for (const auto& [id, m] : spec.edits) ids.push_back(id);
  ids.insert(ids.end(), spec.deletions.begin(), spec.deletions.end());
  const MetricsRow row = image_row(after, ds, true, iteration_of(ck), scene_of(ck));
  write_report(cfg.out, row, "edit", ids,
               {{"transformed", spec.edits.size()},
                {"deleted", spec.deletions.size()},
                {"gaussians_removed", removed},
                {"gaussians", kept}});
  std::printf("edited %zu primitives, deleted %zu; %zu Gaussians remain\n", spec.edits.size(), spec.deletions.size(),
              kept);
  return kExitOk;
}

int cmd_eval(const Common& c) {
  const Checkpoint ck = load_required_checkpoint(c);
  const ProjectConfig cfg = resolve(c, &ck.config);
  const Dataset ds = require_dataset(cfg);
  const Scene& scene = scene_of(ck);
  const auto images = render_all(ck, cfg, ds, ck.stage2 ? &ck.stage2->gs : nullptr);
  MetricsRow row = image_row(images, ds, ck.stage2.has_value(), iteration_of(ck), scene);
  nlohmann::ordered_json report;
  report["stage"] = ck.stage;
  report["K_active"] = row.k_active;
  if (!ds.gt_points.empty()) {
    row.chamfer = scene_chamfer(scene, build_icosphere(ck.subdivision), ds.gt_points,
                                static_cast<std::size_t>(cfg.stage1.chamfer_samples), cfg.seed);
    report["chamfer"] = row.chamfer;
    std::printf("chamfer %.17g\n", row.chamfer);
  }
  report["psnr"] = row.psnr;
  report["ssim"] = row.ssim;
  std::printf("psnr %.17g\nssim %.17g\n", row.psnr, row.ssim);
  if (!ck.stage2) {
    double iou = 0.0;
    for (std::size_t i = 0; i < images.size(); ++i) iou += mask_iou(images[i], ds.views[i].silhouette) / images.size();
    report["silhouette_iou"] = iou;
    std::printf("silhouette_iou %.17g\n", iou);
  }
  fs::create_directories(cfg.out);
  std::ofstream(cfg.out / "eval.json") << report.dump(2) << '\n';
  write_report(cfg.out, row, "eval", {}, report);
  return kExitOk;
}

int cmd_export(const Common& c) {
  const Checkpoint ck = load_required_checkpoint(c);
  const ProjectConfig cfg = resolve(c, &ck.config);
  const Scene& scene = scene_of(ck);
  fs::create_directories(cfg.out);
  std::ofstream(cfg.out / "scene.json") << scene_to_json(scene).dump(2) << '\n';
  const auto files = write_primitive_objs(cfg.out / "meshes", scene, build_icosphere(ck.subdivision));
  if (ck.stage2) write_splat_ply(cfg.out / "splats.ply", ck.stage2->gs);
  EventLog(cfg.out / "events.jsonl")
      .record(iteration_of(ck), "export", scene.active_object_ids(),
              nlohmann::ordered_json{{"meshes", files.size()},
                                     {"gaussians", ck.stage2 ? ck.stage2->gs.gaussians().size() : 0}}
                  .dump());
  std::printf("exported %zu primitive meshes%s to %s\n", files.size(), ck.stage2 ? " and splats" : "",
              cfg.out.string().c_str());
  return kExitOk;
}

void add_common(CLI::App* app, Common& c, bool dataset, bool checkpoint) {
  app->add_option("--config", c.config, "JSON config file");
  app->add_option("--set", c.sets, "override a config key, path=value (repeatable)");
  app->add_option("--seed", c.seed, "random seed");
  app->add_option("--out", c.out, "output directory");
  app->add_option("--threads", c.threads, "worker threads (0 = default)");
  if (dataset) app->add_option("--dataset", c.dataset, "dataset directory");
  if (checkpoint) app->add_option("--checkpoint", c.checkpoint, "checkpoint file");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sqblocks: superquadric blocks with bound Gaussian splats"};
  app.require_subcommand(1);
  Common c;
  std::string shape, resume, edit_file;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(synth, c, false, false);
  synth->add_option("--shape", shape, "sphere, ellipsoid, dumbbell, two-blob or toy-figure");
  auto* fit = app.add_subcommand("fit", "stage 1: fit superquadrics to silhouettes");
  add_common(fit, c, true, false);
  fit->add_option("--resume", resume, "continue from a stage-1 checkpoint");
  auto* bind = app.add_subcommand("bind", "stage 2: bind and fit Gaussians");
  add_common(bind, c, true, true);
  auto* render = app.add_subcommand("render", "render every dataset camera");
  add_common(render, c, true, true);
  auto* edit = app.add_subcommand("edit", "apply a rigid edit / deletion file");
  add_common(edit, c, true, true);
  edit->add_option("--edit", edit_file, "edit JSON file");
  auto* eval = app.add_subcommand("eval", "chamfer, PSNR and SSIM of a checkpoint");
  add_common(eval, c, true, true);
  auto* exp = app.add_subcommand("export", "scene JSON, primitive OBJs and splat PLY");
  add_common(exp, c, false, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (synth->parsed()) return cmd_synth(c, shape);
    if (fit->parsed()) return cmd_fit(c, resume);
    if (bind->parsed()) return cmd_bind(c);
    if (render->parsed()) return cmd_render(c);
    if (edit->parsed()) return cmd_edit(c, edit_file);
    if (eval->parsed()) return cmd_eval(c);
    if (exp->parsed()) return cmd_export(c);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const UnknownPrimitive& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const Diverged& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const MissingPrior& e) {
    std::cerr << "missing prior: " << e.what() << '\n';
    return kExitMissingPrior;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}
