// Copyright 2026 The knnmt-uda Authors.
// SPDX-License-Identifier: Apache-2.0

#include "knnmt/ivf.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <queue>

#include "knnmt/binary_io.hpp"

namespace knnmt {

double squared_l2(const float* a, const float* b, int dim) {
  // Four fixed lanes keep the summation order identical everywhere.
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  int i = 0;
  for (; i + 4 <= dim; i += 4) {
    const double d0 = static_cast<double>(a[i]) - b[i];
    const double d1 = static_cast<double>(a[i + 1]) - b[i + 1];
    const double d2 = static_cast<double>(a[i + 2]) - b[i + 2];
    const double d3 = static_cast<double>(a[i + 3]) - b[i + 3];
    s0 += d0 * d0;
    s1 += d1 * d1;
    s2 += d2 * d2;
    s3 += d3 * d3;
  }
  for (; i < dim; ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s0 += d * d;
  }
  return (s0 + s1) + (s2 + s3);
}

namespace {

struct Assignment {
  std::vector<int> cluster;
  std::vector<double> distance;
};

// Nearest centroid per entry; ties go to the lower centroid id.
Assignment assign(const Datastore& ds, const std::vector<float>& centroids, int nlist) {
  Assignment a;
  a.cluster.resize(ds.size());
  a.distance.resize(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (int c = 0; c < nlist; ++c) {
      const double d = squared_l2(ds.key(i), centroids.data() + static_cast<std::size_t>(c) * ds.dim, ds.dim);
      if (d < best) {
        best = d;
        arg = c;
      }
    }
    a.cluster[i] = arg;
    a.distance[i] = best;
  }
  return a;
}

std::vector<float> kmeans_pp(const Datastore& ds, int nlist, Rng& rng) {
  const auto n = ds.size();
  const auto dim = static_cast<std::size_t>(ds.dim);
  std::vector<float> centroids;
  centroids.reserve(static_cast<std::size_t>(nlist) * dim);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::size_t first = pick(rng);
  centroids.insert(centroids.end(), ds.key(first), ds.key(first) + dim);
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = squared_l2(ds.key(i), centroids.data(), ds.dim);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int c = 1; c < nlist; ++c) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t chosen = 0;
    if (total > 0.0) {
      const double r = unit(rng) * total;
      double acc = 0.0;
      chosen = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc > r && d2[i] > 0.0) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = pick(rng);
    }
    const float* key = ds.key(chosen);
    const std::size_t at = centroids.size();
    centroids.insert(centroids.end(), key, key + dim);
    for (std::size_t i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], squared_l2(ds.key(i), centroids.data() + at, ds.dim));
  }
  return centroids;
}

}  // namespace

IvfIndex build_ivf(const Datastore& ds, int nlist, int kmeans_iters, std::uint64_t seed) {
  ds.check();
  if (nlist < 1) throw ConfigError("nlist must be >= 1");
  if (static_cast<std::size_t>(nlist) > ds.size())
    throw ConfigError("nlist (" + std::to_string(nlist) + ") exceeds the datastore size (" +
                      std::to_string(ds.size()) + ")");
  if (kmeans_iters < 0) throw ConfigError("kmeans_iters must be >= 0");
  const auto dim = static_cast<std::size_t>(ds.dim);
  Rng rng(seed);
  IvfIndex index;
  index.nlist = nlist;
  index.dim = ds.dim;
  index.centroids = kmeans_pp(ds, nlist, rng);

  for (int it = 0; it < kmeans_iters; ++it) {
    Assignment a = assign(ds, index.centroids, nlist);
    std::vector<std::size_t> count(static_cast<std::size_t>(nlist), 0);
    for (int c : a.cluster) ++count[static_cast<std::size_t>(c)];
    for (int c = 0; c < nlist; ++c) {
      if (count[static_cast<std::size_t>(c)] != 0) continue;
      const auto largest = static_cast<int>(std::max_element(count.begin(), count.end()) - count.begin());
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < ds.size(); ++i) {
        if (a.cluster[i] == largest && a.distance[i] > far_d) {
          far_d = a.distance[i];
          far = i;
        }
      }
      a.cluster[far] = c;
      a.distance[far] = 0.0;
      --count[static_cast<std::size_t>(largest)];
      ++count[static_cast<std::size_t>(c)];
    }
    std::vector<double> sum(static_cast<std::size_t>(nlist) * dim, 0.0);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      double* s = sum.data() + static_cast<std::size_t>(a.cluster[i]) * dim;
      const float* k = ds.key(i);
      for (std::size_t j = 0; j < dim; ++j) s[j] += k[j];
    }
    for (std::size_t c = 0; c < static_cast<std::size_t>(nlist); ++c) {
      if (count[c] == 0) continue;
      for (std::size_t j = 0; j < dim; ++j)
        index.centroids[c * dim + j] = static_cast<float>(sum[c * dim + j] / static_cast<double>(count[c]));
    }
  }

  const Assignment final_assignment = assign(ds, index.centroids, nlist);
  index.lists.assign(static_cast<std::size_t>(nlist), {});
  for (std::size_t i = 0; i < ds.size(); ++i)
    index.lists[static_cast<std::size_t>(final_assignment.cluster[i])].push_back(i);
  return index;
}

namespace {

struct Candidate {
  double distance;
  std::uint64_t id;
  bool operator<(const Candidate& o) const {
    return distance < o.distance || (distance == o.distance && id < o.id);
  }
};

// Keeps the k smallest candidates; the heap top is the current worst.
class TopK {
 public:
  explicit TopK(std::size_t k) : k_(k) {}
  void offer(double d, std::uint64_t id) {
    const Candidate c{d, id};
    if (heap_.size() < k_) {
      heap_.push(c);
    } else if (c < heap_.top()) {
      heap_.pop();
      heap_.push(c);
    }
  }
  std::vector<Neighbor> sorted(const Datastore& ds) {
    std::vector<Candidate> all;
    while (!heap_.empty()) {
      all.push_back(heap_.top());
      heap_.pop();
    }
    std::sort(all.begin(), all.end());
    std::vector<Neighbor> out;
    out.reserve(all.size());
    for (const auto& c : all) out.push_back({c.id, c.distance, ds.values[c.id]});
    return out;
  }

 private:
  std::size_t k_;
  std::priority_queue<Candidate> heap_;
};

void check_query(const Datastore& ds, std::span<const float> query, int k) {
  if (k < 1) throw ConfigError("k must be >= 1");
  if (query.size() != static_cast<std::size_t>(ds.dim))
    throw DimensionError("query width " + std::to_string(query.size()) + " != datastore dim " +
                         std::to_string(ds.dim));
}

}  // namespace

std::vector<Neighbor> knn_search(const IvfIndex& index, const Datastore& ds,
                                 std::span<const float> query, int k, int nprobe) {
  if (ds.empty()) return {};
  check_query(ds, query, k);
  if (index.dim != ds.dim) throw DimensionError("index and datastore dims differ");
  if (nprobe < 1 || nprobe > index.nlist)
    throw ConfigError("nprobe must lie in [1, " + std::to_string(index.nlist) + "]");
  std::vector<Candidate> cents(static_cast<std::size_t>(index.nlist));
  for (int c = 0; c < index.nlist; ++c)
    cents[static_cast<std::size_t>(c)] = {squared_l2(query.data(), index.centroid(static_cast<std::size_t>(c)), index.dim),
                                          static_cast<std::uint64_t>(c)};
  std::partial_sort(cents.begin(), cents.begin() + nprobe, cents.end());
  TopK top(static_cast<std::size_t>(k));
  for (int p = 0; p < nprobe; ++p) {
    for (std::uint64_t id : index.lists[cents[static_cast<std::size_t>(p)].id]) {
      if (id >= ds.size()) throw FormatError("index refers past the end of the datastore", 0);
      top.offer(squared_l2(query.data(), ds.key(id), ds.dim), id);
    }
  }
  return top.sorted(ds);
}

std::vector<Neighbor> brute_force_search(const Datastore& ds, std::span<const float> query, int k) {
  if (ds.empty()) return {};
  check_query(ds, query, k);
  TopK top(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < ds.size(); ++i) top.offer(squared_l2(query.data(), ds.key(i), ds.dim), i);
  return top.sorted(ds);
}

std::vector<std::uint8_t> encode_index(const IvfIndex& index) {
  if (index.centroids.size() != static_cast<std::size_t>(index.nlist) * static_cast<std::size_t>(index.dim) ||
      index.lists.size() != static_cast<std::size_t>(index.nlist))
    throw DimensionError("index shape is inconsistent");
  ByteWriter w;
  w.bytes("UDKI");
  w.u32(kIndexVersion);
  w.u32(static_cast<std::uint32_t>(index.nlist));
  w.u32(static_cast<std::uint32_t>(index.dim));
  for (float c : index.centroids) w.f32(c);
  for (const auto& list : index.lists) {
    w.u64(list.size());
    for (auto id : list) w.u64(id);
  }
  return w.buffer();
}

IvfIndex decode_index(std::vector<std::uint8_t> bytes) {
  ByteReader r(std::move(bytes));
  r.expect_magic("UDKI", "index");
  const auto version_at = r.offset();
  if (r.u32() != kIndexVersion) throw FormatError("unsupported index version", version_at);
  IvfIndex index;
  index.nlist = static_cast<int>(r.u32());
  index.dim = static_cast<int>(r.u32());
  const std::uint64_t n = static_cast<std::uint64_t>(index.nlist) * static_cast<std::uint64_t>(index.dim);
  r.need(n * 4);
  index.centroids.resize(n);
  for (auto& c : index.centroids) c = r.f32();
  index.lists.resize(static_cast<std::size_t>(index.nlist));
  for (auto& list : index.lists) {
    const std::uint64_t len = r.u64();
    r.need(len * 8);
    list.resize(len);
    for (auto& id : list) id = r.u64();
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after index", r.offset());
  return index;
}

void save_index(const std::filesystem::path& path, const IvfIndex& index) {
  write_file(path, encode_index(index));
}

IvfIndex load_index(const std::filesystem::path& path) { return decode_index(read_file(path)); }

}  // namespace knnmt
