// Copyright 2026 The knnmt-uda Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "knnmt/datastore.hpp"

namespace knnmt {

/// Inverted-file index: k-means centroids plus, per centroid, the ids of the
/// datastore entries assigned to it.
struct IvfIndex {
  int nlist = 0;
  int dim = 0;
  std::vector<float> centroids;  // nlist x dim
  std::vector<std::vector<std::uint64_t>> lists;

  const float* centroid(std::size_t c) const {
    return centroids.data() + c * static_cast<std::size_t>(dim);
  }

  bool operator==(const IvfIndex&) const = default;
};

struct Neighbor {
  std::uint64_t entry_id = 0;
  double distance = 0.0;  // squared L2
  TokenId value = 0;

  bool operator==(const Neighbor&) const = default;
};

/// Squared L2 accumulated in double.
double squared_l2(const float* a, const float* b, int dim);

/// k-means++ seeding, `kmeans_iters` Lloyd rounds, empty clusters re-seeded
/// with the farthest member of the largest cluster. Throws ConfigError unless
/// 1 <= nlist <= |ds|.
IvfIndex build_ivf(const Datastore& ds, int nlist, int kmeans_iters, std::uint64_t seed);

/// Top-k over the lists of the `nprobe` nearest centroids, ascending distance,
/// ties by entry id. An empty store gives an empty result.
std::vector<Neighbor> knn_search(const IvfIndex& index, const Datastore& ds,
                                 std::span<const float> query, int k, int nprobe);

/// Exhaustive top-k with the same ordering rules.
std::vector<Neighbor> brute_force_search(const Datastore& ds, std::span<const float> query, int k);

inline constexpr std::uint32_t kIndexVersion = 1;

std::vector<std::uint8_t> encode_index(const IvfIndex& index);
IvfIndex decode_index(std::vector<std::uint8_t> bytes);
void save_index(const std::filesystem::path& path, const IvfIndex& index);
IvfIndex load_index(const std::filesystem::path& path);

}  // namespace knnmt
