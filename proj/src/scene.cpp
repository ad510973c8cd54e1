#include "sqb/scene.hpp"

#include <algorithm>

namespace sqb {

const char* role_name(PrimitiveRole role) {
  switch (role) {
    case PrimitiveRole::kObject:
      return "object";
    case PrimitiveRole::kDome:
      return "dome";
    case PrimitiveRole::kGround:
      return "ground";
  }
  return "object";
}

PrimitiveRole role_from_name(const std::string& name) {
  if (name == "object") return PrimitiveRole::kObject;
  if (name == "dome") return PrimitiveRole::kDome;
  if (name == "ground") return PrimitiveRole::kGround;
  throw ConfigError("unknown primitive role '" + name + "'");
}

PrimitiveId Scene::add(const Superquadric& sq, PrimitiveRole role, const Vec3& color) {
  const PrimitiveId id = allocate_id();
  prims_.push_back({sq.with_id(id), role, color});
  return id;
}

void Scene::insert(Primitive prim) {
  if (find(prim.sq.id()) != nullptr) throw std::invalid_argument("duplicate primitive id");
  next_id_ = std::max(next_id_, prim.sq.id() + 1);
  prims_.push_back(std::move(prim));
}

Primitive* Scene::find(PrimitiveId id) {
  for (auto& p : prims_)
    if (p.sq.id() == id) return &p;
  return nullptr;
}

const Primitive* Scene::find(PrimitiveId id) const {
  for (const auto& p : prims_)
    if (p.sq.id() == id) return &p;
  return nullptr;
}

Primitive& Scene::at(PrimitiveId id) {
  Primitive* p = find(id);
  if (p == nullptr) throw UnknownPrimitive(id);
  return *p;
}

const Primitive& Scene::at(PrimitiveId id) const {
  const Primitive* p = find(id);
  if (p == nullptr) throw UnknownPrimitive(id);
  return *p;
}

bool Scene::erase(PrimitiveId id) {
  auto it = std::find_if(prims_.begin(), prims_.end(), [id](const Primitive& p) { return p.sq.id() == id; });
  if (it == prims_.end()) return false;
  prims_.erase(it);
  return true;
}

std::vector<PrimitiveId> Scene::active_object_ids() const {
  std::vector<PrimitiveId> ids;
  for (const auto& p : prims_)
    if (p.is_object() && p.sq.alpha() > 0.0) ids.push_back(p.sq.id());
  return ids;
}

}  // namespace sqb
