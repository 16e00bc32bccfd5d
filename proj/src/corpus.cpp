#include "detangle/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

namespace detangle {

const char* const kEmptyBodyToken = "emptypost";

namespace {

std::string fold(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

// strip one trailing ':' or ',' — the IRC addressing convention
std::string strip_address_mark(const std::string& tok) {
  if (!tok.empty() && (tok.back() == ':' || tok.back() == ','))
    return tok.substr(0, tok.size() - 1);
  return tok;
}

}  // namespace

void UserRegistry::note(const std::string& name, std::size_t index) {
  std::string key = fold(name);
  auto it = users.find(key);
  if (it == users.end())
    users[key] = Entry{name, index};
  else
    it->second.last_active = std::max(it->second.last_active, index);
}

std::optional<std::string> UserRegistry::lookup(const std::string& token) const {
  auto it = users.find(fold(token));
  if (it == users.end()) return std::nullopt;
  return it->first;
}

void LinkSet::add(std::size_t query, std::size_t link) {
  if (link > query)
    throw std::runtime_error("link set: link " + std::to_string(link) + " follows query " +
                             std::to_string(query));
  links[query].insert(link);
}

std::size_t LinkSet::pair_count() const {
  std::size_t n = 0;
  for (const auto& [q, ls] : links) n += ls.size();
  return n;
}

std::vector<std::size_t> Chunk::candidates(std::size_t i) const {
  std::size_t lo = i >= window ? i - window : 0;
  lo = std::max(lo, begin);
  std::vector<std::size_t> out;
  out.reserve(i - lo + 1);
  for (std::size_t j = lo; j <= i; ++j) out.push_back(j);
  return out;
}

std::vector<std::string> tokenize(const std::string& body) {
  std::vector<std::string> tokens;
  std::istringstream in(body);
  std::string word;
  while (in >> word) {
    std::string w = fold(word);
    std::size_t lo = 0, hi = w.size();
    while (lo < hi && is_punct(w[lo])) ++lo;
    while (hi > lo && is_punct(w[hi - 1])) --hi;
    for (std::size_t k = 0; k < lo; ++k) tokens.push_back(std::string(1, w[k]));
    if (hi > lo) tokens.push_back(w.substr(lo, hi - lo));
    for (std::size_t k = hi; k < w.size(); ++k) tokens.push_back(std::string(1, w[k]));
  }
  if (tokens.empty()) tokens.push_back(kEmptyBodyToken);
  return tokens;
}

namespace {

int parse_timestamp(const std::string& line, std::size_t line_no) {
  // "[HH:MM] " prefix, fixed width
  if (line.size() < 8 || line[0] != '[' || line[3] != ':' || line[6] != ']')
    throw ParseError(line_no, "expected '[HH:MM] ' prefix");
  auto digit = [&](std::size_t pos) -> int {
    char c = line[pos];
    if (c < '0' || c > '9') throw ParseError(line_no, "bad digit in timestamp");
    return c - '0';
  };
  int hh = digit(1) * 10 + digit(2);
  int mm = digit(4) * 10 + digit(5);
  if (hh > 23 || mm > 59) throw ParseError(line_no, "timestamp out of range");
  if (line[7] != ' ') throw ParseError(line_no, "expected space after timestamp");
  return hh * 60 + mm;
}

}  // namespace

Conversation parse_log(const std::string& text) {
  Conversation conv;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    Post post;
    post.index = conv.posts.size();
    post.raw = line;
    post.timestamp = parse_timestamp(line, line_no);
    std::string rest = line.substr(8);
    if (rest.rfind("=== ", 0) == 0 || rest == "===") {
      post.is_system = true;
      post.tokens = tokenize(rest.size() > 3 ? rest.substr(4) : "");
    } else if (!rest.empty() && rest[0] == '<') {
      std::size_t close = rest.find('>');
      if (close == std::string::npos || close == 1)
        throw ParseError(line_no, "unterminated or empty username");
      post.user = rest.substr(1, close - 1);
      if (close + 1 < rest.size() && rest[close + 1] != ' ')
        throw ParseError(line_no, "expected space after username");
      post.tokens = tokenize(close + 2 <= rest.size() ? rest.substr(close + 1) : "");
      conv.registry.note(post.user, post.index);
    } else {
      throw ParseError(line_no, "expected '<user>' or '===' after timestamp");
    }
    conv.posts.push_back(std::move(post));
  }
  if (conv.posts.empty()) throw ParseError(0, "empty log file");
  for (Post& post : conv.posts)
    if (!post.is_system) post.mention = detect_mention(post, conv.registry);
  return conv;
}

std::string serialize_log(const Conversation& conv) {
  std::ostringstream out;
  for (const Post& post : conv.posts) {
    char stamp[16];
    std::snprintf(stamp, sizeof stamp, "[%02d:%02d] ", post.timestamp / 60,
                  post.timestamp % 60);
    out << stamp;
    if (post.is_system)
      out << "===";
    else
      out << '<' << post.user << '>';
    for (const std::string& tok : post.tokens) out << ' ' << tok;
    out << '\n';
  }
  return out.str();
}

std::optional<std::string> detect_mention(const Post& post, const UserRegistry& registry) {
  if (post.is_system || post.tokens.empty() || registry.empty()) return std::nullopt;
  if (auto hit = registry.lookup(strip_address_mark(post.tokens.front()))) return hit;
  for (const std::string& tok : post.tokens)
    if (auto hit = registry.lookup(tok)) return hit;
  return std::nullopt;
}

LinkSet load_annotations(const std::string& text) {
  LinkSet out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::istringstream ls(line);
    long long i = -1, j = -1;
    std::string extra;
    if (!(ls >> i >> j) || (ls >> extra) || i < 0 || j < 0)
      throw ParseError(line_no, "expected two non-negative integers");
    if (j > i)
      throw ParseError(line_no, "link " + std::to_string(j) + " follows query " +
                                    std::to_string(i));
    out.add(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
  }
  return out;
}

std::string serialize_annotations(const LinkSet& links) {
  std::ostringstream out;
  for (const auto& [q, ls] : links.links)
    for (std::size_t j : ls) out << q << ' ' << j << '\n';
  return out.str();
}

void attach_annotations(Conversation& conv, const LinkSet& gold) {
  if (gold.empty()) throw std::runtime_error("annotations: no links");
  for (const auto& [q, ls] : gold.links) {
    if (q >= conv.size())
      throw std::runtime_error("annotations: query " + std::to_string(q) +
                               " outside conversation of " + std::to_string(conv.size()) +
                               " posts");
  }
  conv.annotated_begin = gold.links.begin()->first;
  conv.annotated_end = conv.size();
}

std::vector<Chunk> chunk_training(const Conversation& conv, const LinkSet& gold,
                                  std::size_t target_span, std::size_t past_context,
                                  std::size_t future_context, std::size_t window) {
  if (!conv.has_annotated_range())
    throw std::runtime_error("chunking: conversation has no annotated range");
  std::vector<Chunk> chunks;
  for (std::size_t t0 = conv.annotated_begin; t0 < conv.annotated_end; t0 += target_span) {
    Chunk chunk;
    chunk.target_begin = t0;
    chunk.target_end = std::min(t0 + target_span, conv.annotated_end);
    chunk.begin = t0 >= past_context ? t0 - past_context : 0;
    chunk.end = std::min(conv.size(), chunk.target_end + future_context);
    chunk.window = window;
    for (const auto& [q, ls] : gold.links)
      if (q >= chunk.target_begin && q < chunk.target_end)
        for (std::size_t j : ls) chunk.gold.add(q, j);
    chunks.push_back(std::move(chunk));
  }
  return chunks;
}

Chunk prepare_eval(const Conversation& conv, const LinkSet* gold, std::size_t past_context,
                   std::size_t window) {
  if (!conv.has_annotated_range())
    throw std::runtime_error("eval window: conversation has no annotated range");
  Chunk chunk;
  chunk.target_begin = conv.annotated_begin;
  chunk.target_end = conv.annotated_end;
  chunk.begin =
      conv.annotated_begin >= past_context ? conv.annotated_begin - past_context : 0;
  chunk.end = conv.size();
  chunk.window = window;
  if (gold)
    for (const auto& [q, ls] : gold->links)
      if (q >= chunk.target_begin && q < chunk.target_end)
        for (std::size_t j : ls) chunk.gold.add(q, j);
  return chunk;
}

int minutes_between(int link_ts, int query_ts) {
  int d = (query_ts - link_ts) % 1440;
  if (d < 0) d += 1440;
  return d;
}

}  // namespace detangle
