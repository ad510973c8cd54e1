#pragma once

#include <optional>
#include <vector>

#include "sqb/geometry.hpp"

namespace sqb {

enum class PrimitiveRole { kObject, kDome, kGround };

const char* role_name(PrimitiveRole role);
PrimitiveRole role_from_name(const std::string& name);

struct Primitive {
  Superquadric sq;
  PrimitiveRole role = PrimitiveRole::kObject;
  Vec3 color = Vec3::Constant(0.5);

  bool is_object() const { return role == PrimitiveRole::kObject; }
};

/// Ordered primitive collection. Ids come from a monotone counter and are
/// never handed out twice.
class Scene {
 public:
  std::vector<Primitive>& primitives() { return prims_; }
  const std::vector<Primitive>& primitives() const { return prims_; }

  PrimitiveId next_id() const { return next_id_; }
  void set_next_id(PrimitiveId id) { next_id_ = id; }
  PrimitiveId allocate_id() { return next_id_++; }

  /// Appends a primitive under a freshly allocated id.
  PrimitiveId add(const Superquadric& sq, PrimitiveRole role, const Vec3& color);
  /// Appends with the id already stored in sq; bumps the counter past it.
  void insert(Primitive prim);

  Primitive* find(PrimitiveId id);
  const Primitive* find(PrimitiveId id) const;
  Primitive& at(PrimitiveId id);
  const Primitive& at(PrimitiveId id) const;
  bool erase(PrimitiveId id);

  /// Object primitives with nonzero opacity.
  std::vector<PrimitiveId> active_object_ids() const;
  std::size_t active_object_count() const { return active_object_ids().size(); }

 private:
  std::vector<Primitive> prims_;
  PrimitiveId next_id_ = 0;
};

}  // namespace sqb
