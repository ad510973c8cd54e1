// Drives the sqblocks executable end to end on small synthetic fixtures.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "sqb/config.hpp"
#include "sqb/io.hpp"

using namespace sqb;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "sqb_cli_test";

struct Run {
  int code = -1;
  std::string out;
};

Run cli(const std::string& args) {
  const std::string cmd = std::string(SQB_CLI) + " " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof(buf), p)) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string last_line(const std::string& text) {
  std::istringstream in(text);
  std::string line, last;
  while (std::getline(in, line))
    if (!line.empty()) last = line;
  return last;
}

// one fixture for the whole file: a small sphere dataset and a short fit/bind
struct Fixture {
  fs::path data = kRoot / "sphere";
  fs::path fit = kRoot / "fit";
  fs::path bind = kRoot / "bind";
  Fixture() {
    fs::remove_all(kRoot);
    const std::string common = " --set synth.views=6 --set synth.width=32 --set synth.height=32 --set synth.gt_points=2000";
    REQUIRE(cli("synth --shape sphere --seed 1 --out " + data.string() + common).code == 0);
    const std::string s1 = " --set stage1.total_iters=150 --set stage1.gamma=0 --set stage1.enable_split=false"
                           " --set stage1.enable_fuse=false --set stage1.initial_k=2 --set stage1.chamfer_samples=2000";
    const auto f = cli("fit --seed 2 --dataset " + data.string() + " --out " + fit.string() + s1);
    REQUIRE_MESSAGE(f.code == 0, f.out);
    const auto b = cli("bind --checkpoint " + (fit / "checkpoint.sqb").string() + " --out " + bind.string() +
                       " --set stage2.total_iters=40");
    REQUIRE_MESSAGE(b.code == 0, b.out);
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

}  // namespace

TEST_CASE("synth writes a complete dataset and is reproducible") {
  const auto& f = fixture();
  for (const char* d : {"images", "silhouettes", "masks"}) CHECK(fs::is_regular_file(f.data / d / "005.png"));
  CHECK(fs::is_regular_file(f.data / "cameras.json"));
  CHECK(fs::is_regular_file(f.data / "gt_points.ply"));
  const fs::path again = kRoot / "sphere_again";
  REQUIRE(cli("synth --shape sphere --seed 1 --out " + again.string() +
              " --set synth.views=6 --set synth.width=32 --set synth.height=32 --set synth.gt_points=2000")
              .code == 0);
  for (const auto& e : fs::recursive_directory_iterator(f.data)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), f.data);
    CHECK_MESSAGE(slurp(e.path()) == slurp(again / rel), rel.string());
  }
}

TEST_CASE("dumbbell masks carry exactly two part labels") {
  const fs::path d = kRoot / "dumbbell";
  REQUIRE(cli("synth --shape dumbbell --out " + d.string() + " --set synth.views=6 --set synth.gt_points=100").code ==
          0);
  const auto ds = load_dataset(d);
  for (const auto& v : ds.views) {
    std::set<int> labels(v.parts->labels.begin(), v.parts->labels.end());
    labels.erase(0);
    CHECK(labels.size() == 2);
  }
}

TEST_CASE("fit writes a checkpoint and metrics") {
  const auto& f = fixture();
  CHECK(fs::is_regular_file(f.fit / "checkpoint.sqb"));
  CHECK(fs::is_regular_file(f.fit / "events.jsonl"));
  CHECK(fs::is_regular_file(f.fit / "scene.json"));
  const std::string csv = slurp(f.fit / "metrics.csv");
  CHECK(csv.rfind("iter,l_rec,l_ac,K_active,chamfer,psnr,ssim\n", 0) == 0);
  std::istringstream row(last_line(csv));
  std::string iter, lrec, lac, k;
  std::getline(row, iter, ',');
  std::getline(row, lrec, ',');
  std::getline(row, lac, ',');
  std::getline(row, k, ',');
  CHECK(iter == "150");
  CHECK(std::stoi(k) >= 1);
}

TEST_CASE("eval prints the library chamfer bit-exactly") {
  const auto& f = fixture();
  const fs::path out = kRoot / "eval";
  const auto r = cli("eval --checkpoint " + (f.fit / "checkpoint.sqb").string() + " --out " + out.string());
  REQUIRE_MESSAGE(r.code == 0, r.out);
  const auto pos = r.out.find("chamfer ");
  REQUIRE(pos != std::string::npos);
  const double printed = std::strtod(r.out.c_str() + pos + 8, nullptr);

  const auto ck = load_checkpoint(f.fit / "checkpoint.sqb");
  const auto cfg = parse_config(ck.config.dump(), "checkpoint");
  const auto ds = load_dataset(f.data);
  const double lib = scene_chamfer(ck.stage1.scene, build_icosphere(ck.subdivision), ds.gt_points,
                                   static_cast<std::size_t>(cfg.stage1.chamfer_samples), cfg.seed);
  CHECK(printed == lib);
  CHECK(fs::is_regular_file(out / "eval.json"));
}

TEST_CASE("invalid configs exit 2 and write nothing") {
  const auto& f = fixture();
  const fs::path out = kRoot / "bad";
  const auto r = cli("fit --dataset " + f.data.string() + " --out " + out.string() + " --set stage1.gamma=-1");
  CHECK(r.code == 2);
  CHECK_FALSE(fs::exists(out));

  const fs::path cfg = kRoot / "bad.json";
  std::ofstream(cfg) << "{\n  \"stage1\": {\n    \"gama\": 0.1\n  }\n}\n";
  const auto r2 = cli("fit --config " + cfg.string() + " --dataset " + f.data.string() + " --out " + out.string());
  CHECK(r2.code == 2);
  CHECK(r2.out.find("bad.json:3:") != std::string::npos);
  CHECK_FALSE(fs::exists(out));
}

TEST_CASE("missing priors exit 4") {
  const auto& f = fixture();
  const fs::path out = kRoot / "noprior";
  const auto r = cli("fit --dataset " + f.data.string() + " --out " + out.string() +
                     " --set provider.mode=files --set provider.dir=" + (kRoot / "nowhere").string());
  CHECK(r.code == 4);
}

TEST_CASE("identity edit leaves renders bit-identical") {
  const auto& f = fixture();
  const fs::path edit = kRoot / "identity.json";
  const auto ck = load_checkpoint(f.bind / "checkpoint.sqb");
  const auto id = ck.stage2->gs.scene().active_object_ids().front();
  std::ofstream(edit) << "{\"edits\": [{\"id\": " << id
                      << ", \"matrix\": [1,0,0,0, 0,1,0,0, 0,0,1,0, 0,0,0,1]}], \"delete\": []}";
  const fs::path out = kRoot / "edit_id";
  const auto r = cli("edit --checkpoint " + (f.bind / "checkpoint.sqb").string() + " --edit " + edit.string() +
                     " --out " + out.string());
  REQUIRE_MESSAGE(r.code == 0, r.out);
  int views = 0;
  for (const auto& e : fs::directory_iterator(out / "before")) {
    CHECK(slurp(e.path()) == slurp(out / "after" / e.path().filename()));
    ++views;
  }
  CHECK(views == 6);
}

TEST_CASE("deleting a primitive shrinks the silhouette") {
  const auto& f = fixture();
  const auto ck = load_checkpoint(f.bind / "checkpoint.sqb");
  const auto ids = ck.stage2->gs.scene().active_object_ids();
  const fs::path edit = kRoot / "delete.json";
  std::ofstream(edit) << "{\"edits\": [], \"delete\": [" << ids.front() << "]}";
  const fs::path out = kRoot / "edit_del";
  const auto r = cli("edit --checkpoint " + (f.bind / "checkpoint.sqb").string() + " --edit " + edit.string() +
                     " --out " + out.string());
  REQUIRE_MESSAGE(r.code == 0, r.out);
  long before_px = 0, after_px = 0, escaped = 0;
  for (const auto& e : fs::directory_iterator(out / "before_mask")) {
    const Image b = read_png(e.path());
    const Image a = read_png(out / "after_mask" / e.path().filename());
    for (std::size_t i = 0; i < b.data.size(); ++i) {
      const bool in_b = b.data[i] >= 0.5, in_a = a.data[i] >= 0.5;
      before_px += in_b;
      after_px += in_a;
      escaped += in_a && !in_b;
    }
  }
  CHECK(escaped == 0);
  CHECK(after_px < before_px);
  const auto edited = load_checkpoint(out / "checkpoint.sqb");
  for (const auto& g : edited.stage2->gs.gaussians()) CHECK(g.id_k != ids.front());

  std::ofstream(edit) << "{\"edits\": [], \"delete\": [999]}";
  const fs::path out2 = kRoot / "edit_bad";
  const auto bad = cli("edit --checkpoint " + (f.bind / "checkpoint.sqb").string() + " --edit " + edit.string() +
                       " --out " + out2.string());
  CHECK(bad.code == 2);
  CHECK(bad.out.find("999") != std::string::npos);
  CHECK_FALSE(fs::exists(out2));
}

TEST_CASE("render and export") {
  const auto& f = fixture();
  const fs::path out = kRoot / "render";
  REQUIRE(cli("render --checkpoint " + (f.bind / "checkpoint.sqb").string() + " --out " + out.string()).code == 0);
  CHECK(fs::is_regular_file(out / "renders" / "000.png"));
  CHECK(fs::is_regular_file(out / "metrics.csv"));
  const fs::path ex = kRoot / "export";
  REQUIRE(cli("export --checkpoint " + (f.bind / "checkpoint.sqb").string() + " --out " + ex.string()).code == 0);
  CHECK(fs::is_regular_file(ex / "scene.json"));
  CHECK(fs::is_regular_file(ex / "splats.ply"));
  CHECK_FALSE(fs::is_empty(ex / "meshes"));
}
