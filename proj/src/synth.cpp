#include "sqb/synth.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace sqb {

bool Solid::contains(const Vec3& p) const {
  const Vec3 d = p - center;
  if (kind == Kind::kEllipsoid) return d.cwiseQuotient(radii).squaredNorm() < 1.0;
  return d.x() * d.x() + d.z() * d.z() < radii.x() * radii.x() && std::abs(d.y()) < radii.y();
}

std::optional<std::pair<double, Vec3>> Solid::intersect(const Vec3& origin, const Vec3& dir) const {
  const Vec3 o = origin - center;
  if (kind == Kind::kEllipsoid) {
    const Vec3 os = o.cwiseQuotient(radii), ds = dir.cwiseQuotient(radii);
    const double a = ds.squaredNorm(), b = 2.0 * os.dot(ds), c = os.squaredNorm() - 1.0;
    const double disc = b * b - 4 * a * c;
    if (disc < 0) return std::nullopt;
    const double t = (-b - std::sqrt(disc)) / (2 * a);
    if (t <= 0) return std::nullopt;
    const Vec3 p = o + t * dir;
    return std::make_pair(t, p.cwiseQuotient(radii.cwiseProduct(radii)).normalized());
  }
  const double r = radii.x(), hh = radii.y();
  std::optional<std::pair<double, Vec3>> best;
  auto consider = [&](double t, const Vec3& n) {
    if (t > 0 && (!best || t < best->first)) best = std::make_pair(t, n);
  };
  const double a = dir.x() * dir.x() + dir.z() * dir.z();
  if (a > 0) {
    const double b = 2 * (o.x() * dir.x() + o.z() * dir.z());
    const double c = o.x() * o.x() + o.z() * o.z() - r * r;
    const double disc = b * b - 4 * a * c;
    if (disc >= 0) {
      const double t = (-b - std::sqrt(disc)) / (2 * a);
      const Vec3 p = o + t * dir;
      if (std::abs(p.y()) <= hh) consider(t, Vec3(p.x(), 0, p.z()).normalized());
    }
  }
  if (dir.y() != 0) {
    for (double s : {-1.0, 1.0}) {
      const double t = (s * hh - o.y()) / dir.y();
      const Vec3 p = o + t * dir;
      if (p.x() * p.x() + p.z() * p.z() <= r * r && s * dir.y() < 0) consider(t, Vec3(0, s, 0));
    }
  }
  return best;
}

int AnalyticShape::label_count() const {
  std::set<std::int32_t> s;
  for (const auto& so : solids) s.insert(so.label);
  return static_cast<int>(s.size());
}

bool AnalyticShape::contains(const Vec3& p) const {
  return std::any_of(solids.begin(), solids.end(), [&](const Solid& s) { return s.contains(p); });
}

std::vector<Vec3> AnalyticShape::sample_surface(std::size_t n, std::mt19937_64& rng) const {
  std::normal_distribution<double> gauss;
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  // rough area weights
  std::vector<double> area;
  for (const auto& s : solids) {
    if (s.kind == Solid::Kind::kEllipsoid) {
      const double p = 1.6075;
      const Vec3 r = s.radii;
      area.push_back(4 * M_PI *
                     std::pow((std::pow(r.x() * r.y(), p) + std::pow(r.x() * r.z(), p) + std::pow(r.y() * r.z(), p)) / 3,
                              1 / p));
    } else {
      area.push_back(2 * M_PI * s.radii.x() * 2 * s.radii.y() + 2 * M_PI * s.radii.x() * s.radii.x());
    }
  }
  std::discrete_distribution<std::size_t> pick(area.begin(), area.end());
  std::vector<Vec3> pts;
  pts.reserve(n);
  std::size_t guard = 0;
  while (pts.size() < n && guard++ < 50 * n) {
    const std::size_t k = pick(rng);
    const Solid& s = solids[k];
    Vec3 p;
    if (s.kind == Solid::Kind::kEllipsoid) {
      const Vec3 d = Vec3(gauss(rng), gauss(rng), gauss(rng)).normalized();
      p = s.center + d.cwiseProduct(s.radii);
    } else {
      const double side = 2 * M_PI * s.radii.x() * 2 * s.radii.y();
      const double caps = 2 * M_PI * s.radii.x() * s.radii.x();
      const double phi = 2 * M_PI * uni(rng);
      if (uni(rng) * (side + caps) < side) {
        p = s.center + Vec3(s.radii.x() * std::cos(phi), (2 * uni(rng) - 1) * s.radii.y(), s.radii.x() * std::sin(phi));
      } else {
        const double rr = s.radii.x() * std::sqrt(uni(rng));
        p = s.center + Vec3(rr * std::cos(phi), uni(rng) < 0.5 ? -s.radii.y() : s.radii.y(), rr * std::sin(phi));
      }
    }
    bool hidden = false;
    for (std::size_t o = 0; o < solids.size() && !hidden; ++o) hidden = o != k && solids[o].contains(p);
    if (!hidden) pts.push_back(p);
  }
  return pts;
}

AnalyticShape make_shape(const std::string& name) {
  AnalyticShape s;
  s.name = name;
  using K = Solid::Kind;
  if (name == "sphere") {
    s.solids = {{K::kEllipsoid, Vec3::Zero(), Vec3::Ones(), 1, Vec3(0.8, 0.3, 0.2)}};
    s.bounding_radius = 1.0;
  } else if (name == "ellipsoid") {
    s.solids = {{K::kEllipsoid, Vec3::Zero(), Vec3(1.2, 0.8, 0.6), 1, Vec3(0.3, 0.6, 0.9)}};
    s.bounding_radius = 1.2;
  } else if (name == "dumbbell") {
    // two balls on the y axis joined by a thin bar; parts split at y = 0
    const Vec3 top(0.85, 0.3, 0.2), bottom(0.2, 0.4, 0.85);
    s.solids = {{K::kEllipsoid, Vec3(0, 0.95, 0), Vec3::Constant(0.3), 1, top},
                {K::kEllipsoid, Vec3(0, -0.95, 0), Vec3::Constant(0.3), 2, bottom},
                {K::kCylinderY, Vec3(0, 0.35, 0), Vec3(0.08, 0.35, 0.08), 1, top},
                {K::kCylinderY, Vec3(0, -0.35, 0), Vec3(0.08, 0.35, 0.08), 2, bottom}};
    s.bounding_radius = 1.25;
  } else if (name == "two-blob") {
    s.solids = {{K::kEllipsoid, Vec3(-0.7, 0, 0), Vec3::Constant(0.45), 1, Vec3(0.9, 0.5, 0.1)},
                {K::kEllipsoid, Vec3(0.7, 0, 0), Vec3::Constant(0.45), 2, Vec3(0.1, 0.7, 0.4)}};
    s.bounding_radius = 1.15;
  } else if (name == "toy-figure") {
    s.solids = {{K::kEllipsoid, Vec3(0, -0.2, 0), Vec3(0.4, 0.55, 0.3), 1, Vec3(0.8, 0.2, 0.2)},
                {K::kEllipsoid, Vec3(0, 0.6, 0), Vec3::Constant(0.28), 2, Vec3(0.9, 0.8, 0.6)},
                {K::kEllipsoid, Vec3(-0.6, -0.1, 0), Vec3(0.25, 0.12, 0.12), 3, Vec3(0.2, 0.5, 0.8)},
                {K::kEllipsoid, Vec3(0.6, -0.1, 0), Vec3(0.25, 0.12, 0.12), 4, Vec3(0.2, 0.8, 0.5)}};
    s.bounding_radius = 1.0;
  } else {
    throw ConfigError("unknown synthetic shape '" + name +
                      "' (expected sphere, ellipsoid, dumbbell, two-blob or toy-figure)");
  }
  return s;
}

std::vector<Camera> camera_ring(const SynthRecipe& r, double bounding_radius) {
  std::vector<Camera> cams;
  const double dist = r.distance_factor * bounding_radius;
  const double fov = 2.0 * std::atan(1.25 * bounding_radius / dist) * 180.0 / M_PI;
  for (int i = 0; i < r.views; ++i) {
    const double az = 2.0 * M_PI * i / r.views;
    const double el = (i % 2 == 0 ? r.elevation_deg : r.elevation_low_deg) * M_PI / 180.0;
    const Vec3 eye(dist * std::cos(el) * std::sin(az), dist * std::sin(el), dist * std::cos(el) * std::cos(az));
    Camera c = Camera::look_at(eye, Vec3::Zero(), Vec3::UnitY(), fov, r.width, r.height);
    c.far = 10.0 * dist;
    cams.push_back(Camera::from_intrinsics(c.view, c.fx, c.fy, c.cx, c.cy, c.width, c.height, c.near, c.far));
  }
  return cams;
}

RayCast ray_cast(const AnalyticShape& shape, const Camera& cam, bool shading, const Vec3& background) {
  RayCast rc;
  rc.image = Image(cam.width, cam.height, 3);
  rc.silhouette = Image(cam.width, cam.height, 1);
  rc.labels = {cam.width, cam.height, std::vector<std::int32_t>(static_cast<std::size_t>(cam.width) * cam.height, 0)};
  const Mat3 r = cam.view.block<3, 3>(0, 0);
  const Vec3 eye = cam.center();
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      const Vec3 dc((x + 0.5 - cam.cx) / cam.fx, (y + 0.5 - cam.cy) / cam.fy, 1.0);
      const Vec3 dir = (r.transpose() * dc).normalized();
      double best = std::numeric_limits<double>::infinity();
      const Solid* hit = nullptr;
      Vec3 normal;
      for (const auto& s : shape.solids) {
        const auto h = s.intersect(eye, dir);
        if (h && h->first < best) {
          best = h->first;
          hit = &s;
          normal = h->second;
        }
      }
      const std::size_t p = static_cast<std::size_t>(y) * cam.width + x;
      if (!hit) {
        for (int c = 0; c < 3; ++c) rc.image.data[3 * p + c] = background[c];
        continue;
      }
      const double shade = shading ? 0.3 + 0.7 * std::max(0.0, -normal.dot(dir)) : 1.0;
      for (int c = 0; c < 3; ++c) rc.image.data[3 * p + c] = shade * hit->color[c];
      rc.silhouette.data[p] = 1.0;
      rc.labels.labels[p] = hit->label;
    }
  return rc;
}

Dataset synthesize(const SynthRecipe& recipe) {
  if (recipe.views < 1 || recipe.width < 1 || recipe.height < 1) throw ConfigError("synth: views and size must be positive");
  const AnalyticShape shape = make_shape(recipe.shape);
  Dataset ds;
  const auto cams = camera_ring(recipe, shape.bounding_radius);
  for (int i = 0; i < recipe.views; ++i) {
    RayCast rc = ray_cast(shape, cams[i], recipe.shading, recipe.background);
    View v;
    v.id = i;
    v.camera = cams[i];
    v.image = std::move(rc.image);
    v.silhouette = std::move(rc.silhouette);
    v.parts = std::move(rc.labels);
    ds.views.push_back(std::move(v));
  }
  std::mt19937_64 rng(recipe.seed);
  ds.gt_points = shape.sample_surface(static_cast<std::size_t>(recipe.gt_points), rng);
  return ds;
}

}  // namespace sqb
