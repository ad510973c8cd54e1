#include "sqb/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace sqb {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume a little-endian host");

nlohmann::ordered_json scene_to_json(const Scene& scene) {
  nlohmann::ordered_json j;
  j["next_id"] = scene.next_id();
  j["primitives"] = nlohmann::ordered_json::array();
  for (const auto& p : scene.primitives()) {
    const auto a = p.sq.params();
    nlohmann::ordered_json e;
    e["id"] = p.sq.id();
    e["role"] = role_name(p.role);
    e["alpha"] = p.sq.alpha();
    e["rotation"] = std::vector<double>(p.sq.rotation().data(), p.sq.rotation().data() + 9);  // column-major
    e["translation"] = {p.sq.trans().x(), p.sq.trans().y(), p.sq.trans().z()};
    e["scale"] = {p.sq.scale().x(), p.sq.scale().y(), p.sq.scale().z()};
    e["eps"] = {p.sq.eps().x(), p.sq.eps().y()};
    e["color"] = {p.color.x(), p.color.y(), p.color.z()};
    e["params"] = std::vector<double>(a.begin(), a.end());
    j["primitives"].push_back(std::move(e));
  }
  return j;
}

Scene scene_from_json(const nlohmann::json& j) {
  Scene scene;
  try {
    for (const auto& e : j.at("primitives")) {
      const auto params = e.at("params").get<std::vector<double>>();
      if (params.size() != Superquadric::kParamCount) throw ConfigError("scene primitive needs 15 params");
      const auto c = e.at("color").get<std::vector<double>>();
      if (c.size() != 3) throw ConfigError("scene primitive color needs 3 values");
      Primitive p{Superquadric::from_params(params, e.at("id").get<PrimitiveId>()),
                  role_from_name(e.at("role").get<std::string>()), Vec3(c[0], c[1], c[2])};
      scene.insert(std::move(p));
    }
    scene.set_next_id(std::max(scene.next_id(), j.at("next_id").get<PrimitiveId>()));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("scene: ") + e.what());
  }
  return scene;
}

std::vector<std::filesystem::path> write_primitive_objs(const std::filesystem::path& dir, const Scene& scene,
                                                        const IcosphereTemplate& tpl) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> files;
  for (const auto& p : scene.primitives()) {
    const PrimitiveMesh mesh = deform(p.sq, tpl);
    const auto path = dir / ("prim_" + std::to_string(p.sq.id()) + ".obj");
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << "# primitive " << p.sq.id() << ' ' << role_name(p.role) << " alpha " << p.sq.alpha() << '\n';
    out << std::setprecision(9);
    for (const Vec3& v : mesh.world_vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
    for (const Face& f : mesh.face_list()) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
    files.push_back(path);
  }
  return files;
}

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream s;
  s << rng;
  return s.str();
}

std::mt19937_64 rng_from_string(const std::string& s) {
  std::mt19937_64 rng;
  std::istringstream in(s);
  in >> rng;
  if (!in) throw ConfigError("checkpoint: bad rng state");
  return rng;
}

namespace {

constexpr char kMagic[8] = {'S', 'Q', 'B', 'C', 'K', 'P', 'T', '1'};

class BlobWriter {
 public:
  void add(const std::string& name, std::span<const double> v) { add_raw(name, "f64", v.data(), v.size(), 8); }
  void add(const std::string& name, std::span<const std::int64_t> v) { add_raw(name, "i64", v.data(), v.size(), 8); }
  const nlohmann::ordered_json& table() const { return table_; }
  const std::string& bytes() const { return bytes_; }

 private:
  void add_raw(const std::string& name, const char* dtype, const void* data, std::size_t count, std::size_t width) {
    table_.push_back({{"name", name}, {"dtype", dtype}, {"offset", bytes_.size()}, {"count", count}});
    bytes_.append(static_cast<const char*>(data), count * width);
  }
  nlohmann::ordered_json table_ = nlohmann::ordered_json::array();
  std::string bytes_;
};

class BlobReader {
 public:
  BlobReader(const nlohmann::json& table, std::string bytes) : bytes_(std::move(bytes)) {
    for (const auto& e : table) entries_[e.at("name").get<std::string>()] = e;
  }
  template <typename T>
  std::vector<T> get(const std::string& name) const {
    const auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("checkpoint: missing blob " + name);
    const std::string want = std::is_same_v<T, double> ? "f64" : "i64";
    if (it->second.at("dtype").get<std::string>() != want) throw ConfigError("checkpoint: blob " + name + " dtype");
    const auto offset = it->second.at("offset").get<std::size_t>();
    const auto count = it->second.at("count").get<std::size_t>();
    if (offset + count * sizeof(T) > bytes_.size()) throw ConfigError("checkpoint: blob " + name + " truncated");
    std::vector<T> out(count);
    if (count) std::memcpy(out.data(), bytes_.data() + offset, count * sizeof(T));
    return out;
  }

 private:
  std::map<std::string, nlohmann::json> entries_;
  std::string bytes_;
};

void put_adam(BlobWriter& w, nlohmann::ordered_json& steps, const std::string& name, const ad::AdamState& s) {
  w.add(name + ".m", s.m);
  w.add(name + ".v", s.v);
  steps[name] = s.step;
}

ad::AdamState get_adam(const BlobReader& r, const nlohmann::json& steps, const std::string& name) {
  ad::AdamState s;
  s.m = r.get<double>(name + ".m");
  s.v = r.get<double>(name + ".v");
  s.step = steps.at(name).get<long>();
  return s;
}

nlohmann::ordered_json scene_meta(const Scene& scene, BlobWriter& w, const std::string& prefix) {
  nlohmann::ordered_json j;
  j["next_id"] = scene.next_id();
  std::vector<double> params, colors;
  std::vector<std::int64_t> ids;
  std::vector<std::string> roles;
  for (const auto& p : scene.primitives()) {
    const auto a = p.sq.params();
    params.insert(params.end(), a.begin(), a.end());
    colors.insert(colors.end(), p.color.data(), p.color.data() + 3);
    ids.push_back(p.sq.id());
    roles.push_back(role_name(p.role));
  }
  j["roles"] = roles;
  w.add(prefix + ".ids", ids);
  w.add(prefix + ".params", params);
  w.add(prefix + ".colors", colors);
  return j;
}

Scene read_scene(const nlohmann::json& j, const BlobReader& r, const std::string& prefix) {
  const auto ids = r.get<std::int64_t>(prefix + ".ids");
  const auto params = r.get<double>(prefix + ".params");
  const auto colors = r.get<double>(prefix + ".colors");
  const auto roles = j.at("roles").get<std::vector<std::string>>();
  const std::size_t n = ids.size();
  if (params.size() != n * Superquadric::kParamCount || colors.size() != 3 * n || roles.size() != n)
    throw ConfigError("checkpoint: inconsistent scene blobs");
  Scene scene;
  for (std::size_t i = 0; i < n; ++i) {
    Primitive p{Superquadric::from_params(std::span<const double>(params.data() + i * 15, 15), ids[i]),
                role_from_name(roles[i]), Vec3(colors[3 * i], colors[3 * i + 1], colors[3 * i + 2])};
    scene.insert(std::move(p));
  }
  scene.set_next_id(j.at("next_id").get<PrimitiveId>());
  return scene;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  BlobWriter w;
  nlohmann::ordered_json m;
  m["format"] = "sqblocks-checkpoint";
  m["version"] = Checkpoint::kVersion;
  m["stage"] = ck.stage;
  m["seed"] = ck.seed;
  m["subdivision"] = ck.subdivision;
  m["config"] = ck.config;

  nlohmann::ordered_json s1;
  s1["iteration"] = ck.stage1.iteration;
  s1["rng"] = rng_to_string(ck.stage1.rng);
  s1["hull_radius"] = ck.stage1.hull_radius;
  s1["scene"] = scene_meta(ck.stage1.scene, w, "stage1.scene");
  nlohmann::ordered_json adam = nlohmann::ordered_json::object();
  std::vector<std::int64_t> adam_ids;
  for (const auto& [id, groups] : ck.stage1.adam) {
    adam_ids.push_back(id);
    for (std::size_t g = 0; g < groups.size(); ++g)
      put_adam(w, adam, "stage1.adam." + std::to_string(id) + "." + std::to_string(g), groups[g]);
  }
  w.add("stage1.adam.ids", adam_ids);
  s1["adam_steps"] = adam;
  m["stage1"] = s1;

  if (ck.stage2) {
    const Stage2State& st = *ck.stage2;
    const GaussianScene& gs = st.gs;
    nlohmann::ordered_json s2;
    s2["iteration"] = st.iteration;
    s2["rng"] = rng_to_string(st.rng);
    s2["extent"] = st.extent;
    s2["sh_degree"] = gs.sh_degree();
    s2["subdivision"] = gs.icosphere().subdivision_level;
    s2["scene"] = scene_meta(gs.scene(), w, "stage2.scene");
    std::vector<std::int64_t> unit_ids;
    std::vector<double> units;
    for (const auto& [id, u] : gs.units()) {
      unit_ids.push_back(id);
      units.push_back(u);
    }
    w.add("stage2.unit_ids", unit_ids);
    w.add("stage2.units", units);
    std::vector<double> f;
    std::vector<std::int64_t> bind;
    for (const auto& g : gs.gaussians()) {
      f.insert(f.end(), g.mu.data(), g.mu.data() + 3);
      f.insert(f.end(), g.quat.data(), g.quat.data() + 4);
      f.insert(f.end(), g.scale.data(), g.scale.data() + 3);
      f.push_back(g.opacity);
      f.insert(f.end(), g.sh.begin(), g.sh.end());
      bind.push_back(g.id_k);
      bind.push_back(g.id_t);
    }
    w.add("stage2.gaussians", f);
    w.add("stage2.binding", bind);
    nlohmann::ordered_json steps = nlohmann::ordered_json::object();
    for (std::size_t g = 0; g < st.adam.size(); ++g) put_adam(w, steps, "stage2.adam." + std::to_string(g), st.adam[g]);
    s2["adam_steps"] = steps;
    w.add("stage2.grad_accum", st.grad_accum);
    std::vector<std::int64_t> counts(st.grad_count.begin(), st.grad_count.end());
    w.add("stage2.grad_count", counts);
    m["stage2"] = s2;
  }
  m["blobs"] = w.table();

  const std::string manifest = m.dump(1);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t len = manifest.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint64_t len = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw ConfigError(path.string() + " is not a checkpoint");
  std::string manifest(len, '\0');
  in.read(manifest.data(), static_cast<std::streamsize>(len));
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (!in.eof() && !in) throw ConfigError(path.string() + ": truncated checkpoint");

  Checkpoint ck;
  try {
    const auto m = nlohmann::json::parse(manifest);
    if (m.at("version").get<int>() != Checkpoint::kVersion)
      throw ConfigError(path.string() + ": unsupported checkpoint version");
    const BlobReader r(m.at("blobs"), std::move(bytes));
    ck.stage = m.at("stage").get<std::string>();
    ck.seed = m.at("seed").get<std::uint64_t>();
    ck.subdivision = m.at("subdivision").get<int>();
    ck.config = nlohmann::ordered_json::parse(m.at("config").dump());

    const auto& s1 = m.at("stage1");
    ck.stage1.iteration = s1.at("iteration").get<int>();
    ck.stage1.rng = rng_from_string(s1.at("rng").get<std::string>());
    ck.stage1.hull_radius = s1.at("hull_radius").get<double>();
    ck.stage1.scene = read_scene(s1.at("scene"), r, "stage1.scene");
    for (std::int64_t id : r.get<std::int64_t>("stage1.adam.ids")) {
      PrimitiveAdam groups;
      for (std::size_t g = 0; g < groups.size(); ++g)
        groups[g] = get_adam(r, s1.at("adam_steps"), "stage1.adam." + std::to_string(id) + "." + std::to_string(g));
      ck.stage1.adam[id] = std::move(groups);
    }

    if (m.contains("stage2")) {
      const auto& s2 = m.at("stage2");
      Stage2State st;
      const int deg = s2.at("sh_degree").get<int>();
      st.gs = GaussianScene(read_scene(s2.at("scene"), r, "stage2.scene"), s2.at("subdivision").get<int>(), deg);
      const auto unit_ids = r.get<std::int64_t>("stage2.unit_ids");
      const auto units = r.get<double>("stage2.units");
      if (unit_ids.size() != units.size()) throw ConfigError("checkpoint: unit table size");
      for (std::size_t i = 0; i < units.size(); ++i) st.gs.set_unit(unit_ids[i], units[i]);
      st.gs.rebuild_frames();
      const auto f = r.get<double>("stage2.gaussians");
      const auto bind = r.get<std::int64_t>("stage2.binding");
      const std::size_t nsh = sh_coefficients(deg), width = 11 + 3 * nsh;
      const std::size_t n = bind.size() / 2;
      if (f.size() != n * width || bind.size() != 2 * n) throw ConfigError("checkpoint: Gaussian blob size");
      for (std::size_t i = 0; i < n; ++i) {
        const double* p = f.data() + i * width;
        BoundGaussian g;
        g.mu = Vec3(p[0], p[1], p[2]);
        g.quat = Vec4(p[3], p[4], p[5], p[6]);
        g.scale = Vec3(p[7], p[8], p[9]);
        g.opacity = p[10];
        g.sh.assign(p + 11, p + width);
        g.id_k = bind[2 * i];
        g.id_t = static_cast<std::int32_t>(bind[2 * i + 1]);
        if (!st.gs.binding_valid(g)) throw ConfigError("checkpoint: Gaussian with invalid binding");
        st.gs.gaussians().push_back(std::move(g));
      }
      for (std::size_t g = 0; g < st.adam.size(); ++g)
        st.adam[g] = get_adam(r, s2.at("adam_steps"), "stage2.adam." + std::to_string(g));
      st.iteration = s2.at("iteration").get<int>();
      st.rng = rng_from_string(s2.at("rng").get<std::string>());
      st.extent = s2.at("extent").get<double>();
      st.grad_accum = r.get<double>("stage2.grad_accum");
      const auto counts = r.get<std::int64_t>("stage2.grad_count");
      st.grad_count.assign(counts.begin(), counts.end());
      if (st.grad_accum.size() != n || st.grad_count.size() != n)
        throw ConfigError("checkpoint: densification statistics size");
      ck.stage2 = std::move(st);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": malformed manifest: " + e.what());
  }
  return ck;
}

}  // namespace sqb
