#include "sqb/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>

namespace sqb {

namespace {

using Json = nlohmann::json;

struct Field {
  std::function<void(const Json&)> read;  // throws std::string describing the type problem
  std::function<nlohmann::ordered_json()> write;
};
using Schema = std::vector<std::pair<std::string, Field>>;

Field num(double& x) {
  return {[&x](const Json& j) {
            if (!j.is_number()) throw std::string("expected a number");
            x = j.get<double>();
          },
          [&x] { return nlohmann::ordered_json(x); }};
}

Field integer(int& x) {
  return {[&x](const Json& j) {
            if (!j.is_number_integer()) throw std::string("expected an integer");
            const auto v = j.get<long long>();
            if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
              throw std::string("integer out of range");
            x = static_cast<int>(v);
          },
          [&x] { return nlohmann::ordered_json(x); }};
}

Field u64(std::uint64_t& x) {
  return {[&x](const Json& j) {
            if (!j.is_number_integer() || (j.is_number_integer() && !j.is_number_unsigned() && j.get<long long>() < 0))
              throw std::string("expected a non-negative integer");
            x = j.get<std::uint64_t>();
          },
          [&x] { return nlohmann::ordered_json(x); }};
}

Field boolean(bool& x) {
  return {[&x](const Json& j) {
            if (!j.is_boolean()) throw std::string("expected true or false");
            x = j.get<bool>();
          },
          [&x] { return nlohmann::ordered_json(x); }};
}

Field str(std::string& x) {
  return {[&x](const Json& j) {
            if (!j.is_string()) throw std::string("expected a string");
            x = j.get<std::string>();
          },
          [&x] { return nlohmann::ordered_json(x); }};
}

Field path(std::filesystem::path& x) {
  return {[&x](const Json& j) {
            if (!j.is_string()) throw std::string("expected a path string");
            x = j.get<std::string>();
          },
          [&x] { return nlohmann::ordered_json(x.string()); }};
}

Field vec3(Vec3& x) {
  return {[&x](const Json& j) {
            if (!j.is_array() || j.size() != 3 || !j[0].is_number() || !j[1].is_number() || !j[2].is_number())
              throw std::string("expected an array of 3 numbers");
            x = Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
          },
          [&x] { return nlohmann::ordered_json{x.x(), x.y(), x.z()}; }};
}

Schema schema(ProjectConfig& c) {
  Schema s = {
      {"dataset", path(c.dataset)},
      {"out", path(c.out)},
      {"seed", u64(c.seed)},
      {"threads", integer(c.threads)},
      {"provider.mode", str(c.provider.mode)},
      {"provider.dir", path(c.provider.dir)},
      {"provider.blur_sigma", num(c.provider.blur_sigma)},
      {"synth.shape", str(c.synth.shape)},
      {"synth.views", integer(c.synth.views)},
      {"synth.width", integer(c.synth.width)},
      {"synth.height", integer(c.synth.height)},
      {"synth.elevation_deg", num(c.synth.elevation_deg)},
      {"synth.elevation_low_deg", num(c.synth.elevation_low_deg)},
      {"synth.distance_factor", num(c.synth.distance_factor)},
      {"synth.shading", boolean(c.synth.shading)},
      {"synth.gt_points", integer(c.synth.gt_points)},
      {"synth.background", vec3(c.synth.background)},
  };
  Stage1Config& a = c.stage1;
  const Schema s1 = {
      {"gamma", num(a.gamma)},
      {"warmup_iters", integer(a.warmup_iters)},
      {"total_iters", integer(a.total_iters)},
      {"structure_cadence", integer(a.structure_cadence)},
      {"scale_schedule", boolean(a.scale_schedule)},
      {"beta", num(a.beta)},
      {"xi", integer(a.xi)},
      {"initial_k", integer(a.initial_k)},
      {"prune_alpha", num(a.prune_alpha)},
      {"subdivision", integer(a.subdivision)},
      {"batch_views", integer(a.batch_views)},
      {"structure_views", integer(a.structure_views)},
      {"enable_split", boolean(a.enable_split)},
      {"enable_fuse", boolean(a.enable_fuse)},
      {"min_cluster_size", integer(a.min_cluster_size)},
      {"max_prompts", integer(a.max_prompts)},
      {"ac_normalized", boolean(a.ac_normalized)},
      {"render.sigma", num(a.render.sigma)},
      {"render.faces_per_pixel", integer(a.render.faces_per_pixel)},
      {"render.cutoff", num(a.render.cutoff)},
      {"lr_alpha", num(a.lr_alpha)},
      {"lr_rotation", num(a.lr_rotation)},
      {"lr_translation", num(a.lr_translation)},
      {"lr_scale", num(a.lr_scale)},
      {"lr_shape", num(a.lr_shape)},
      {"lr_final_ratio", num(a.lr_final_ratio)},
      {"init_alpha", num(a.init_alpha)},
      {"init_tilt_deg", num(a.init_tilt_deg)},
      {"background_primitives", boolean(a.background_primitives)},
      {"log_every", integer(a.log_every)},
      {"chamfer_samples", integer(a.chamfer_samples)},
  };
  for (const auto& [k, f] : s1) s.emplace_back("stage1." + k, f);
  Stage2Config& b = c.stage2;
  const Schema s2 = {
      {"lambda_ssim", num(b.lambda_ssim)},
      {"total_iters", integer(b.total_iters)},
      {"densify_cadence", integer(b.densify_cadence)},
      {"scale_schedule", boolean(b.scale_schedule)},
      {"epsilon_pos", num(b.epsilon_pos)},
      {"sh_degree", integer(b.sh_degree)},
      {"lr_position", num(b.lr_position)},
      {"lr_position_final_ratio", num(b.lr_position_final_ratio)},
      {"lr_scaling", num(b.lr_scaling)},
      {"lr_rotation", num(b.lr_rotation)},
      {"lr_opacity", num(b.lr_opacity)},
      {"lr_sh", num(b.lr_sh)},
      {"densify.grad_threshold", num(b.densify.grad_threshold)},
      {"densify.percent_dense", num(b.densify.percent_dense)},
      {"densify.prune_opacity", num(b.densify.prune_opacity)},
      {"render.background", vec3(b.render.background)},
      {"render.tile_size", integer(b.render.tile_size)},
      {"render.alpha_threshold", num(b.render.alpha_threshold)},
      {"render.min_transmittance", num(b.render.min_transmittance)},
      {"render.dilation", num(b.render.dilation)},
      {"render.frustum_margin", num(b.render.frustum_margin)},
      {"log_every", integer(b.log_every)},
  };
  for (const auto& [k, f] : s2) s.emplace_back("stage2." + k, f);
  return s;
}

std::string join(const std::string& prefix, const std::string& key) { return prefix.empty() ? key : prefix + "." + key; }

void flatten(const Json& j, const std::string& prefix, std::vector<std::pair<std::string, const Json*>>& out) {
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) flatten(v, join(prefix, k), out);
  } else {
    out.emplace_back(prefix, &j);
  }
}

void set_path(Json& root, const std::string& dotted, Json value) {
  Json* node = &root;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted.find('.', start);
    const std::string key = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("--set " + dotted + ": empty key");
    if (!node->is_object()) *node = Json::object();
    if (dot == std::string::npos) {
      (*node)[key] = std::move(value);
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

}  // namespace

std::map<std::string, int> key_lines(const std::string& text) {
  struct Frame {
    bool object;
    std::string prefix;
    std::string key;
    bool expect_key;
  };
  std::map<std::string, int> lines;
  std::vector<Frame> stack;
  int line = 1;
  auto value_path = [&]() -> std::string {
    if (stack.empty()) return "";
    const Frame& f = stack.back();
    return f.object ? join(f.prefix, f.key) : f.prefix;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (ch == '\n') {
      ++line;
    } else if (ch == '"') {
      const int start_line = line;
      std::string s;
      for (++i; i < text.size() && text[i] != '"'; ++i) {
        if (text[i] == '\\' && i + 1 < text.size()) ++i;
        if (text[i] == '\n') ++line;
        s += text[i];
      }
      if (!stack.empty() && stack.back().object && stack.back().expect_key) {
        stack.back().key = s;
        stack.back().expect_key = false;
        lines.emplace(join(stack.back().prefix, s), start_line);
      }
    } else if (ch == '{' || ch == '[') {
      stack.push_back({ch == '{', value_path(), "", ch == '{'});
    } else if (ch == '}' || ch == ']') {
      if (!stack.empty()) stack.pop_back();
    } else if (ch == ',') {
      if (!stack.empty() && stack.back().object) stack.back().expect_key = true;
    }
  }
  return lines;
}

void ProjectConfig::validate() const {
  stage1.validate();
  stage2.validate();
  if (provider.mode != "oracle" && provider.mode != "files")
    throw ConfigError("provider.mode must be \"oracle\" or \"files\"");
  if (provider.mode == "files" && provider.dir.empty())
    throw ConfigError("provider.dir is required when provider.mode is \"files\"");
  if (!(provider.blur_sigma > 0.0)) throw ConfigError("provider.blur_sigma must be positive");
  if (synth.views <= 0) throw ConfigError("synth.views must be positive");
  if (synth.width <= 0 || synth.height <= 0) throw ConfigError("synth.width and synth.height must be positive");
  if (!(synth.distance_factor > 1.0)) throw ConfigError("synth.distance_factor must exceed 1");
  if (synth.gt_points < 0) throw ConfigError("synth.gt_points must be >= 0");
  if (threads < 0) throw ConfigError("threads must be >= 0");
}

ProjectConfig parse_config(const std::string& text, const std::string& source,
                           const std::vector<std::string>& overrides) {
  Json root = Json::object();
  if (!text.empty()) {
    try {
      root = Json::parse(text);
    } catch (const Json::parse_error& e) {
      const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
      const int line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + upto, '\n'));
      throw ConfigError(source + ":" + std::to_string(line) + ": invalid JSON: " + e.what());
    }
    if (!root.is_object()) throw ConfigError(source + ":1: top level must be a JSON object");
  }
  auto lines = key_lines(text);
  for (const std::string& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set " + o + ": expected path=value");
    const std::string key = o.substr(0, eq), raw = o.substr(eq + 1);
    Json value;
    try {
      value = Json::parse(raw);
    } catch (const Json::parse_error&) {
      value = raw;
    }
    set_path(root, key, std::move(value));
    lines.erase(key);
  }
  auto where = [&](const std::string& key) {
    const auto it = lines.find(key);
    if (it != lines.end()) return source + ":" + std::to_string(it->second) + ": ";
    for (const std::string& o : overrides)
      if (o.rfind(key + "=", 0) == 0) return "--set " + key + ": ";
    return source + ": ";
  };

  ProjectConfig cfg;
  const Schema s = schema(cfg);
  std::vector<std::pair<std::string, const Json*>> leaves;
  flatten(root, "", leaves);
  for (const auto& [key, value] : leaves) {
    if (key.empty()) continue;
    const auto it = std::find_if(s.begin(), s.end(), [&](const auto& f) { return f.first == key; });
    if (it == s.end()) throw ConfigError(where(key) + "unknown key \"" + key + "\"");
    try {
      it->second.read(*value);
    } catch (const std::string& what) {
      throw ConfigError(where(key) + key + ": " + what);
    }
  }
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    std::string msg = e.what();
    const std::size_t end = msg.find_first_of(" :");
    throw ConfigError(where(msg.substr(0, end)) + msg);
  }
  return cfg;
}

ProjectConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), file.string(), overrides);
}

nlohmann::ordered_json config_to_json(const ProjectConfig& cfg) {
  ProjectConfig copy = cfg;
  nlohmann::ordered_json out = nlohmann::ordered_json::object();
  for (const auto& [key, field] : schema(copy)) {
    nlohmann::ordered_json* node = &out;
    std::size_t start = 0;
    for (std::size_t dot; (dot = key.find('.', start)) != std::string::npos; start = dot + 1)
      node = &(*node)[key.substr(start, dot - start)];
    (*node)[key.substr(start)] = field.write();
  }
  return out;
}

}  // namespace sqb
