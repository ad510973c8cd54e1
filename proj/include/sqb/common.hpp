#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace sqb {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Face = Eigen::Matrix<std::int32_t, 3, 1>;

/// Stable identifier of a primitive. Never reused after a primitive is retired.
using PrimitiveId = std::int64_t;

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateRotation : public Error {
 public:
  using Error::Error;
};

class AllClipped : public Error {
 public:
  using Error::Error;
};

class EmptyPrompt : public Error {
 public:
  explicit EmptyPrompt(PrimitiveId id)
      : Error("primitive " + std::to_string(id) + " has no visible vertices"), id_(id) {}
  PrimitiveId id() const { return id_; }

 private:
  PrimitiveId id_;
};

class MissingPrior : public Error {
 public:
  using Error::Error;
};

class InvalidDecision : public Error {
 public:
  using Error::Error;
};

class UnknownPrimitive : public Error {
 public:
  explicit UnknownPrimitive(PrimitiveId id)
      : Error("unknown primitive id " + std::to_string(id)), id_(id) {}
  PrimitiveId id() const { return id_; }

 private:
  PrimitiveId id_;
};

class Diverged : public Error {
 public:
  Diverged(int iteration, const std::string& detail)
      : Error("optimization diverged at iteration " + std::to_string(iteration) + ": " + detail),
        iteration_(iteration) {}
  int iteration() const { return iteration_; }

 private:
  int iteration_;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Axis-aligned pixel rectangle, inclusive lower corner, exclusive upper corner.
struct PixelBox {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double diagonal() const;
  bool contains(const Vec2& p) const { return p.x() >= x0 && p.x() <= x1 && p.y() >= y0 && p.y() <= y1; }
  bool empty() const { return x1 <= x0 || y1 <= y0; }
  static PixelBox merged(const PixelBox& a, const PixelBox& b);
};

}  // namespace sqb
