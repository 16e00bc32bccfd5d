#include "detangle/features.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <set>
#include <sstream>
#include <stdexcept>

namespace detangle {

namespace {

const std::array<const char*, 50> kStopwords = {
    "a",   "an",  "and",  "are",   "as",   "at",   "be",   "but", "by",   "can",
    "did", "do",  "for",  "from",  "had",  "has",  "have", "he",  "her",  "his",
    "how", "i",   "if",   "in",    "is",   "it",   "its",  "me",  "my",   "no",
    "not", "of",  "on",   "or",    "our",  "she",  "so",   "that", "the", "their",
    "them", "they", "this", "to",  "was",  "we",   "what", "when", "which", "you"};

std::string fold(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

bool all_punct(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) {
    return std::ispunct(c) != 0;
  });
}

std::string strip_address_mark(const std::string& tok) {
  if (!tok.empty() && (tok.back() == ':' || tok.back() == ','))
    return tok.substr(0, tok.size() - 1);
  return tok;
}

std::vector<std::string> comparison_words(const Post& post) {
  std::vector<std::string> words;
  words.reserve(post.tokens.size());
  for (const std::string& tok : post.tokens) {
    std::string w = strip_address_mark(tok);
    if (!w.empty()) words.push_back(fold(w));
  }
  return words;
}

std::size_t time_bin(int minutes) {
  if (minutes == 0) return 0;
  if (minutes == 1) return 1;
  if (minutes <= 5) return 2;
  if (minutes <= 15) return 3;
  if (minutes <= 60) return 4;
  return 5;
}

std::size_t distance_bin(std::size_t d) {
  if (d <= 4) return d;
  if (d <= 10) return 5;
  if (d <= 20) return 6;
  return 7;
}

std::size_t token_count_bin(std::size_t n) {
  if (n <= 1) return 0;
  if (n == 2) return 1;
  if (n <= 5) return 2;
  if (n <= 10) return 3;
  return 4;
}

bool same_user(const Post& a, const Post& b) {
  return !a.is_system && !b.is_system && fold(a.user) == fold(b.user);
}

bool mentions(const Post& who, const Post& whom) {
  return who.mention.has_value() && !whom.is_system && fold(*who.mention) == fold(whom.user);
}

}  // namespace

bool is_stopword(const std::string& token) {
  return std::find_if(kStopwords.begin(), kStopwords.end(),
                      [&](const char* w) { return token == w; }) != kStopwords.end();
}

const FeatureSlice& FeatureSchema::slice(const std::string& name) const {
  for (const FeatureSlice& s : slices)
    if (s.name == name) return s;
  throw std::runtime_error("feature schema: unknown slice " + name);
}

std::string FeatureSchema::describe() const {
  std::ostringstream out;
  out << "detangle pairwise feature schema v" << version << "\n";
  out << "dimension " << dimension << "\n";
  for (const FeatureSlice& s : slices)
    out << s.name << " offset=" << s.offset << " width=" << s.width << "\n";
  return out.str();
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t FeatureSchema::hash() const { return fnv1a(describe()); }

const FeatureSchema& feature_schema() {
  static const FeatureSchema schema = [] {
    FeatureSchema s;
    s.version = 1;
    std::size_t off = 0;
    auto push = [&](const std::string& name, std::size_t width) {
      s.slices.push_back({name, off, width});
      off += width;
    };
    push("time_delta_bins", 6);      // 0, 1, 2-5, 6-15, 16-60, >60 minutes
    push("index_distance_bins", 8);  // 0, 1, 2, 3, 4, 5-10, 11-20, >=21
    push("same_user", 1);
    push("self_pair", 1);
    push("link_mentions_query_user", 1);
    push("query_mentions_link_user", 1);
    push("query_is_system", 1);
    push("link_is_system", 1);
    push("query_token_count_bins", 5);  // 1, 2, 3-5, 6-10, >10
    push("link_token_count_bins", 5);
    push("shared_token_bins", 6);  // 0..4, >=5 shared non-stopword tokens
    push("link_is_previous", 1);
    push("user_query_vs_link", 12);  // 6 edit bins + 5 prefix bins + prefix flag
    push("user_link_vs_query", 12);
    s.dimension = off;
    return s;
  }();
  return schema;
}

std::size_t levenshtein(const std::string& a, const std::string& b) {
  std::size_t n = a.size(), m = b.size();
  if (n == 0) return m;
  if (m == 0) return n;
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

std::size_t longest_common_prefix(const std::string& a, const std::string& b) {
  std::size_t n = std::min(a.size(), b.size());
  std::size_t k = 0;
  while (k < n && std::tolower(static_cast<unsigned char>(a[k])) ==
                      std::tolower(static_cast<unsigned char>(b[k])))
    ++k;
  return k;
}

namespace {

// one direction of the username-matching block: 6 + 5 + 1 slots
void username_against_words(const std::string& username,
                            const std::vector<std::string>& words, double* out) {
  std::string uname = fold(username);
  std::size_t best_dist = std::string::npos;
  std::size_t best_lcp = 0;
  bool prefix = false;
  for (const std::string& w : words) {
    best_dist = std::min(best_dist, levenshtein(uname, w));
    best_lcp = std::max(best_lcp, longest_common_prefix(uname, w));
    if (w.size() >= uname.size() && w.compare(0, uname.size(), uname) == 0) prefix = true;
  }
  if (best_dist != std::string::npos) out[std::min<std::size_t>(best_dist, 5)] = 1.0;
  if (best_lcp >= 3) out[6 + std::min<std::size_t>(best_lcp, 7) - 3] = 1.0;
  out[11] = prefix ? 1.0 : 0.0;
}

}  // namespace

std::vector<double> user_features(const Post& query, const Post& link) {
  std::vector<double> out(24, 0.0);
  if (query.is_system || link.is_system || query.user.empty() || link.user.empty())
    return out;
  username_against_words(query.user, comparison_words(link), out.data());
  username_against_words(link.user, comparison_words(query), out.data() + 12);
  return out;
}

std::vector<double> base_features(const Post& query, const Post& link) {
  if (link.index > query.index)
    throw std::runtime_error("features: link " + std::to_string(link.index) +
                             " follows query " + std::to_string(query.index));
  const FeatureSchema& schema = feature_schema();
  std::size_t base_width = schema.slice("user_query_vs_link").offset;
  std::vector<double> out(base_width, 0.0);
  auto put = [&](const char* name, std::size_t idx) {
    const FeatureSlice& s = schema.slice(name);
    out[s.offset + idx] = 1.0;
  };
  put("time_delta_bins", time_bin(minutes_between(link.timestamp, query.timestamp)));
  put("index_distance_bins", distance_bin(query.index - link.index));
  if (same_user(query, link)) put("same_user", 0);
  if (query.index == link.index) put("self_pair", 0);
  if (mentions(link, query)) put("link_mentions_query_user", 0);
  if (mentions(query, link)) put("query_mentions_link_user", 0);
  if (query.is_system) put("query_is_system", 0);
  if (link.is_system) put("link_is_system", 0);
  put("query_token_count_bins", token_count_bin(query.tokens.size()));
  put("link_token_count_bins", token_count_bin(link.tokens.size()));
  std::set<std::string> qtok;
  for (const std::string& t : query.tokens)
    if (!is_stopword(t) && !all_punct(t) && t != kEmptyBodyToken) qtok.insert(t);
  std::size_t shared = 0;
  std::set<std::string> seen;
  for (const std::string& t : link.tokens)
    if (qtok.count(t) && seen.insert(t).second) ++shared;
  put("shared_token_bins", std::min<std::size_t>(shared, 5));
  if (query.index == link.index + 1) put("link_is_previous", 0);
  return out;
}

Tensor pair_features(const Post& query, const Post& link) {
  const FeatureSchema& schema = feature_schema();
  std::vector<double> base = base_features(query, link);
  std::vector<double> user = user_features(query, link);
  Tensor out({schema.dimension});
  std::copy(base.begin(), base.end(), out.data.begin());
  std::copy(user.begin(), user.end(), out.data.begin() + base.size());
  return out;
}

}  // namespace detangle
