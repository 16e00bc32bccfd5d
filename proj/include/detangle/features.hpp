#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "detangle/corpus.hpp"
#include "detangle/tensor.hpp"

namespace detangle {

struct FeatureSlice {
  std::string name;
  std::size_t offset;
  std::size_t width;
};

// Fixed pairwise feature layout. The descriptor text is versioned and hashed
// into checkpoints so stale models fail loudly.
struct FeatureSchema {
  int version;
  std::vector<FeatureSlice> slices;
  std::size_t dimension;

  const FeatureSlice& slice(const std::string& name) const;
  std::string describe() const;
  std::uint64_t hash() const;
};

const FeatureSchema& feature_schema();

std::uint64_t fnv1a(const std::string& text);

// unit-cost insert/delete/substitute edit distance
std::size_t levenshtein(const std::string& a, const std::string& b);

// length of the maximal shared prefix, case-insensitive
std::size_t longest_common_prefix(const std::string& a, const std::string& b);

// The username-matching slice: for each direction (query's username against
// the link's words, then the reverse), a one-hot over min-edit-distance bins
// {0,1,2,3,4,>4}, a one-hot over max-common-prefix bins {3,4,5,6,>6} (all
// zero below 3), and a flag for the username being a prefix of any word.
// All 24 slots are zero when either side is a system post.
std::vector<double> user_features(const Post& query, const Post& link);

// Time/distance bins, user and mention flags, token-count bins, shared
// non-stopword token count, adjacency flag. Layout per feature_schema().
std::vector<double> base_features(const Post& query, const Post& link);

// base slice followed by the user slice, in schema order
Tensor pair_features(const Post& query, const Post& link);

bool is_stopword(const std::string& token);

}  // namespace detangle
