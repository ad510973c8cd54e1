#include "sqb/semantics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace sqb {

ImageEmbedding embed_view(int view_id, const Image& image) {
  // FNV-1a over the raw samples
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  mix(&image.width, sizeof(image.width));
  mix(&image.height, sizeof(image.height));
  mix(image.data.data(), image.data.size() * sizeof(double));
  return {view_id, h};
}

AttentionMap attention_map(const AttentionProvider& provider, const ImageEmbedding& h, const Vec2& point,
                           const PixelBox& box) {
  if (!box.contains(point)) throw std::invalid_argument("attention_map: prompt point outside box");
  return provider.query(h, point, box);
}

// ---- file-backed provider ----

FileAttentionProvider::FileAttentionProvider(std::filesystem::path dir) : dir_(std::move(dir)) {
  if (!std::filesystem::is_directory(dir_)) throw MissingPrior("attention map directory not found: " + dir_.string());
}

std::filesystem::path FileAttentionProvider::entry_path(const std::filesystem::path& dir, int view_id,
                                                        const Vec2& point, const PixelBox& box) {
  std::ostringstream name;
  name << static_cast<long>(std::floor(point.x())) << '_' << static_cast<long>(std::floor(point.y())) << '_'
       << static_cast<long>(std::floor(box.x0)) << '_' << static_cast<long>(std::floor(box.y0)) << '_'
       << static_cast<long>(std::floor(box.x1)) << '_' << static_cast<long>(std::floor(box.y1)) << ".amap";
  return dir / std::to_string(view_id) / name.str();
}

AttentionMap FileAttentionProvider::query(const ImageEmbedding& h, const Vec2& point, const PixelBox& box) const {
  const auto path = entry_path(dir_, h.view_id, point, box);
  if (!std::filesystem::exists(path))
    throw MissingPrior("no attention map for view " + std::to_string(h.view_id) + " at " + path.string());
  AttentionMap m = read(path);
  m.point = point;
  m.box = box;
  return m;
}

void FileAttentionProvider::write(const std::filesystem::path& file, const AttentionMap& map) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  if (map.grid.size() != static_cast<std::size_t>(map.width) * map.height)
    throw std::invalid_argument("attention map grid size mismatch");
  std::filesystem::create_directories(file.parent_path());
  std::ofstream os(file, std::ios::binary);
  if (!os) throw Error("cannot write " + file.string());
  os << "AMAP1 " << map.height << ' ' << map.width << ' ' << static_cast<long>(std::floor(map.point.x())) << ' '
     << static_cast<long>(std::floor(map.point.y())) << ' ' << static_cast<long>(std::floor(map.box.x0)) << ' '
     << static_cast<long>(std::floor(map.box.y0)) << ' ' << static_cast<long>(std::floor(map.box.x1)) << ' '
     << static_cast<long>(std::floor(map.box.y1)) << '\n';
  os.write(reinterpret_cast<const char*>(map.grid.data()), static_cast<std::streamsize>(map.grid.size() * 4));
}

AttentionMap FileAttentionProvider::read(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw MissingPrior("cannot read attention map " + file.string());
  std::string header;
  std::getline(is, header);
  std::istringstream hs(header);
  std::string magic;
  long ha, wa, px, py, x0, y0, x1, y1;
  if (!(hs >> magic >> ha >> wa >> px >> py >> x0 >> y0 >> x1 >> y1) || magic != "AMAP1" || ha <= 0 || wa <= 0)
    throw Error("malformed AMAP1 header in " + file.string());
  AttentionMap m;
  m.height = static_cast<int>(ha);
  m.width = static_cast<int>(wa);
  m.point = Vec2(px, py);
  m.box = {double(x0), double(y0), double(x1), double(y1)};
  m.grid.resize(static_cast<std::size_t>(ha) * wa);
  is.read(reinterpret_cast<char*>(m.grid.data()), static_cast<std::streamsize>(m.grid.size() * 4));
  if (!is) throw Error("truncated attention map " + file.string());
  return m;
}

// ---- synthetic oracle ----

SyntheticOracle::SyntheticOracle(std::vector<LabelImage> masks, double blur_sigma)
    : masks_(std::move(masks)), blur_sigma_(blur_sigma) {
  if (!(blur_sigma_ > 0.0)) throw std::invalid_argument("oracle blur sigma must be positive");
}

std::int32_t SyntheticOracle::resolve_label(int view_id, const Vec2& point, const PixelBox& box) const {
  if (view_id < 0 || view_id >= static_cast<int>(masks_.size()))
    throw MissingPrior("oracle has no part mask for view " + std::to_string(view_id));
  const LabelImage& m = masks_[view_id];
  const int px = std::clamp(static_cast<int>(std::floor(point.x())), 0, m.width - 1);
  const int py = std::clamp(static_cast<int>(std::floor(point.y())), 0, m.height - 1);
  const std::int32_t direct = m.at(px, py);
  if (direct != 0) return direct;
  const int x0 = std::max(0, static_cast<int>(std::floor(box.x0)));
  const int y0 = std::max(0, static_cast<int>(std::floor(box.y0)));
  const int x1 = std::min(m.width, static_cast<int>(std::ceil(box.x1)));
  const int y1 = std::min(m.height, static_cast<int>(std::ceil(box.y1)));
  double best = std::numeric_limits<double>::infinity();
  std::int32_t label = 0;
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      const std::int32_t l = m.at(x, y);
      if (l == 0) continue;
      const double d = (Vec2(x + 0.5, y + 0.5) - point).squaredNorm();
      if (d < best) {
        best = d;
        label = l;
      }
    }
  }
  return label;
}

std::shared_ptr<const std::vector<float>> SyntheticOracle::label_map(int view_id, std::int32_t label) const {
  {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = cache_.find({view_id, label});
    if (it != cache_.end()) return it->second;
  }
  const LabelImage& m = masks_[view_id];
  const int w = m.width, h = m.height;
  std::vector<double> ind(static_cast<std::size_t>(w) * h);
  for (std::size_t i = 0; i < ind.size(); ++i) ind[i] = m.labels[i] == label ? 1.0 : 0.0;
  const int r = static_cast<int>(std::ceil(3.0 * blur_sigma_));
  std::vector<double> k(2 * r + 1);
  for (int i = -r; i <= r; ++i) k[i + r] = std::exp(-0.5 * i * i / (blur_sigma_ * blur_sigma_));
  std::vector<double> tmp(ind.size(), 0.0), out(ind.size(), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) {
        const int xx = x + i;
        if (xx >= 0 && xx < w) s += k[i + r] * ind[static_cast<std::size_t>(y) * w + xx];
      }
      tmp[static_cast<std::size_t>(y) * w + x] = s;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) {
        const int yy = y + i;
        if (yy >= 0 && yy < h) s += k[i + r] * tmp[static_cast<std::size_t>(yy) * w + x];
      }
      out[static_cast<std::size_t>(y) * w + x] = s;
    }
  double total = std::accumulate(out.begin(), out.end(), 0.0);
  auto grid = std::make_shared<std::vector<float>>(out.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    (*grid)[i] = static_cast<float>(total > 0.0 ? out[i] / total : 1.0 / static_cast<double>(out.size()));
  std::lock_guard<std::mutex> lock(mutex_);
  return cache_.emplace(std::make_pair(view_id, label), std::move(grid)).first->second;
}

AttentionMap SyntheticOracle::query(const ImageEmbedding& h, const Vec2& point, const PixelBox& box) const {
  const std::int32_t label = resolve_label(h.view_id, point, box);
  const auto grid = label_map(h.view_id, label);
  AttentionMap m;
  m.width = masks_[h.view_id].width;
  m.height = masks_[h.view_id].height;
  m.grid = *grid;
  m.point = point;
  m.box = box;
  return m;
}

std::vector<double> map_features(const AttentionMap& map, int size) {
  std::vector<double> f(static_cast<std::size_t>(size) * size);
  const double sx = static_cast<double>(map.width) / size, sy = static_cast<double>(map.height) / size;
  auto at = [&map](int x, int y) {
    x = std::clamp(x, 0, map.width - 1);
    y = std::clamp(y, 0, map.height - 1);
    return static_cast<double>(map.grid[static_cast<std::size_t>(y) * map.width + x]);
  };
  for (int j = 0; j < size; ++j) {
    const double v = (j + 0.5) * sy - 0.5;
    const int y0 = static_cast<int>(std::floor(v));
    const double fy = v - y0;
    for (int i = 0; i < size; ++i) {
      const double u = (i + 0.5) * sx - 0.5;
      const int x0 = static_cast<int>(std::floor(u));
      const double fx = u - x0;
      f[static_cast<std::size_t>(j) * size + i] = (1 - fy) * ((1 - fx) * at(x0, y0) + fx * at(x0 + 1, y0)) +
                                                  fy * ((1 - fx) * at(x0, y0 + 1) + fx * at(x0 + 1, y0 + 1));
    }
  }
  return f;
}

std::size_t ClusterResult::size_of(int label) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
}

Eigen::MatrixXd pairwise_l2(std::span<const std::vector<double>> features) {
  const auto n = static_cast<Eigen::Index>(features.size());
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const auto& a = features[i];
      const auto& b = features[j];
      double s = 0.0;
      for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
      d(i, j) = d(j, i) = std::sqrt(s);
    }
  return d;
}

namespace {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

struct CondensedCluster {
  int parent = -1;
  double birth = 0.0;
  double stability = 0.0;
  std::vector<int> children;
};

}  // namespace

ClusterResult hdbscan_distances(const Eigen::MatrixXd& dist, int min_cluster_size) {
  if (min_cluster_size < 2) throw std::invalid_argument("hdbscan: min_cluster_size must be >= 2");
  const int n = static_cast<int>(dist.rows());
  ClusterResult res;
  if (n == 0) return res;
  if (n == 1) {
    res.labels = {0};
    res.probabilities = {1.0};
    res.cluster_count = 1;
    return res;
  }

  // core distances, self included as the nearest neighbour
  std::vector<double> core(n);
  const int kth = std::min(min_cluster_size, n) - 1;
  for (int i = 0; i < n; ++i) {
    std::vector<double> row(n);
    for (int j = 0; j < n; ++j) row[j] = dist(i, j);
    row[i] = 0.0;
    std::nth_element(row.begin(), row.begin() + kth, row.end());
    core[i] = row[kth];
  }
  Eigen::MatrixXd mr(n, n);
  double max_mr = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      mr(i, j) = i == j ? 0.0 : std::max({core[i], core[j], dist(i, j)});
      max_mr = std::max(max_mr, mr(i, j));
    }
  const double floor_d = max_mr > 0.0 ? 1e-9 * max_mr : 1.0;
  auto lambda_of = [floor_d](double d) { return 1.0 / std::max(d, floor_d); };

  // Prim's minimum spanning tree over mutual reachability
  struct Edge {
    int a, b;
    double w;
  };
  std::vector<Edge> mst;
  {
    std::vector<bool> in(n, false);
    std::vector<double> best(n, std::numeric_limits<double>::infinity());
    std::vector<int> from(n, -1);
    int cur = 0;
    in[0] = true;
    for (int step = 1; step < n; ++step) {
      for (int j = 0; j < n; ++j)
        if (!in[j] && mr(cur, j) < best[j]) {
          best[j] = mr(cur, j);
          from[j] = cur;
        }
      int next = -1;
      for (int j = 0; j < n; ++j)
        if (!in[j] && (next < 0 || best[j] < best[next])) next = j;
      in[next] = true;
      mst.push_back({from[next], next, best[next]});
      cur = next;
    }
  }
  std::vector<double> levels;
  for (const Edge& e : mst) levels.push_back(e.w);
  std::sort(levels.begin(), levels.end(), std::greater<>());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());

  // top-down: removing every edge of weight >= level splits components at once
  std::vector<CondensedCluster> clusters(1);
  std::vector<int> comp_cluster(n, 0);  // cluster owning each point's current component (-1: fallen out)
  std::vector<int> comp_of(n, 0);      // component representative from the previous level
  std::vector<int> fell_from(n, -1);
  std::vector<double> fell_lambda(n, 0.0);

  for (double level : levels) {
    UnionFind uf(n);
    for (const Edge& e : mst)
      if (e.w < level) uf.unite(e.a, e.b);
    const double lam = lambda_of(level);
    // group new components by old component
    std::map<int, std::map<int, std::vector<int>>> split;  // old rep -> new rep -> points
    for (int p = 0; p < n; ++p) split[comp_of[p]][uf.find(p)].push_back(p);
    for (auto& [old_rep, parts] : split) {
      if (parts.size() < 2) continue;
      const int c = comp_cluster[parts.begin()->second.front()];
      if (c < 0) continue;
      std::vector<const std::vector<int>*> big;
      for (auto& [rep, pts] : parts)
        if (static_cast<int>(pts.size()) >= min_cluster_size) big.push_back(&pts);
      auto fall_out = [&](const std::vector<int>& pts) {
        for (int p : pts) {
          fell_from[p] = c;
          fell_lambda[p] = lam;
          comp_cluster[p] = -1;
          clusters[c].stability += lam - clusters[c].birth;
        }
      };
      if (big.size() >= 2) {
        for (auto& [rep, pts] : parts) {
          if (static_cast<int>(pts.size()) < min_cluster_size) {
            fall_out(pts);
            continue;
          }
          const int child = static_cast<int>(clusters.size());
          clusters.push_back({c, lam, 0.0, {}});
          clusters[c].children.push_back(child);
          clusters[c].stability += static_cast<double>(pts.size()) * (lam - clusters[c].birth);
          for (int p : pts) comp_cluster[p] = child;
        }
      } else {
        for (auto& [rep, pts] : parts)
          if (big.empty() || &pts != big.front()) fall_out(pts);
      }
    }
    for (int p = 0; p < n; ++p) comp_of[p] = uf.find(p);
  }

  // excess-of-mass selection, bottom-up (children always have larger indices)
  const int nc = static_cast<int>(clusters.size());
  std::vector<bool> selected(nc, false);
  std::vector<double> subtree(nc, 0.0);
  for (int c = nc - 1; c >= 0; --c) {
    double child_sum = 0.0;
    for (int ch : clusters[c].children) child_sum += subtree[ch];
    if (clusters[c].children.empty() || clusters[c].stability >= child_sum) {
      selected[c] = true;
      subtree[c] = clusters[c].stability;
      // deselect descendants
      std::vector<int> stack(clusters[c].children.begin(), clusters[c].children.end());
      while (!stack.empty()) {
        const int d = stack.back();
        stack.pop_back();
        selected[d] = false;
        stack.insert(stack.end(), clusters[d].children.begin(), clusters[d].children.end());
      }
    } else {
      subtree[c] = child_sum;
    }
  }
  std::vector<int> dense(nc, -1);
  for (int c = 0; c < nc; ++c)
    if (selected[c]) dense[c] = res.cluster_count++;

  res.labels.assign(n, ClusterResult::kNoise);
  res.probabilities.assign(n, 0.0);
  std::vector<double> max_lambda(res.cluster_count, 0.0);
  for (int p = 0; p < n; ++p) {
    for (int c = fell_from[p]; c >= 0; c = clusters[c].parent) {
      if (selected[c]) {
        res.labels[p] = dense[c];
        max_lambda[dense[c]] = std::max(max_lambda[dense[c]], fell_lambda[p]);
        break;
      }
    }
  }
  for (int p = 0; p < n; ++p)
    if (res.labels[p] >= 0) res.probabilities[p] = fell_lambda[p] / max_lambda[res.labels[p]];
  return res;
}

ClusterResult hdbscan(std::span<const AttentionMap> maps, int min_cluster_size) {
  if (maps.empty()) throw std::invalid_argument("hdbscan: no maps");
  std::vector<std::vector<double>> feats;
  feats.reserve(maps.size());
  for (const auto& m : maps) feats.push_back(map_features(m));
  return hdbscan_distances(pairwise_l2(feats), min_cluster_size);
}

double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw std::invalid_argument("adjusted_rand_index: size mismatch");
  const std::size_t n = a.size();
  if (n < 2) return 1.0;
  std::map<std::pair<int, int>, double> table;
  std::map<int, double> ra, rb;
  for (std::size_t i = 0; i < n; ++i) {
    table[{a[i], b[i]}] += 1;
    ra[a[i]] += 1;
    rb[b[i]] += 1;
  }
  auto c2 = [](double x) { return x * (x - 1) / 2; };
  double sum_ij = 0, sum_a = 0, sum_b = 0;
  for (auto& [k, v] : table) sum_ij += c2(v);
  for (auto& [k, v] : ra) sum_a += c2(v);
  for (auto& [k, v] : rb) sum_b += c2(v);
  const double expected = sum_a * sum_b / c2(static_cast<double>(n));
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;  // both partitions trivial and equal
  return (sum_ij - expected) / (max_index - expected);
}

}  // namespace sqb
