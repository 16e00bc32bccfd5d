#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace detangle {

// Parse failure with the 1-based line it happened on.
struct ParseError : std::runtime_error {
  ParseError(std::size_t line_number, const std::string& what)
      : std::runtime_error("line " + std::to_string(line_number) + ": " + what),
        line(line_number) {}
  std::size_t line;
};

struct Post {
  std::size_t index = 0;
  int timestamp = 0;  // minutes of day, 0..1439
  std::string user;   // empty for system messages
  bool is_system = false;
  std::string raw;
  std::vector<std::string> tokens;
  std::optional<std::string> mention;  // resolved registry username
};

// Usernames are case-insensitive; keyed by folded nick.
struct UserRegistry {
  struct Entry {
    std::string name;  // original spelling of first appearance
    std::size_t last_active = 0;
  };
  std::map<std::string, Entry> users;

  void note(const std::string& name, std::size_t index);
  // exact case-insensitive lookup; returns the registered spelling
  std::optional<std::string> lookup(const std::string& token) const;
  bool empty() const { return users.empty(); }
};

struct Conversation {
  std::vector<Post> posts;
  std::size_t annotated_begin = 0;  // half-open [begin, end)
  std::size_t annotated_end = 0;
  UserRegistry registry;

  std::size_t size() const { return posts.size(); }
  bool has_annotated_range() const { return annotated_end > annotated_begin; }
};

// Gold or predicted reply-to relation: query index -> link indices, j <= i.
struct LinkSet {
  std::map<std::size_t, std::set<std::size_t>> links;

  void add(std::size_t query, std::size_t link);
  bool empty() const { return links.empty(); }
  std::size_t query_count() const { return links.size(); }
  std::size_t pair_count() const;
};

// A contiguous window of a conversation. Indices are conversation-global.
struct Chunk {
  std::size_t begin = 0;  // [begin, end) posts included
  std::size_t end = 0;
  std::size_t target_begin = 0;  // queries contributing loss / predictions
  std::size_t target_end = 0;
  std::size_t window = 50;  // candidate-history length L
  LinkSet gold;             // only queries inside the target span

  std::size_t size() const { return end - begin; }
  // candidate links for query i: the query itself plus its `window`
  // predecessors, truncated at the chunk start
  std::vector<std::size_t> candidates(std::size_t i) const;
};

// lowercase, split on whitespace, then peel leading/trailing punctuation into
// separate tokens; an all-whitespace body yields a single sentinel token
std::vector<std::string> tokenize(const std::string& body);

extern const char* const kEmptyBodyToken;

// `[HH:MM] <user> body` / `[HH:MM] === body`, one post per line.
// Mentions are resolved against the full conversation registry.
Conversation parse_log(const std::string& text);

// Inverse of parse_log up to (user, timestamp, tokens, is_system).
std::string serialize_log(const Conversation& conv);

std::optional<std::string> detect_mention(const Post& post, const UserRegistry& registry);

// Lines "i j" with j <= i; duplicates are dropped silently.
LinkSet load_annotations(const std::string& text);
std::string serialize_annotations(const LinkSet& links);

// Attach gold annotations: sets annotated_range = [min query, |posts|) and
// resolves every referenced index against the conversation.
void attach_annotations(Conversation& conv, const LinkSet& gold);

// Contiguous 50-post target spans over the annotated region, each with 100
// posts of past context and 50 of future context, truncated at the
// conversation boundaries.
std::vector<Chunk> chunk_training(const Conversation& conv, const LinkSet& gold,
                                  std::size_t target_span = 50, std::size_t past_context = 100,
                                  std::size_t future_context = 50, std::size_t window = 50);

// Single evaluation window: past context ahead of the annotated region is
// kept (100 posts, truncated at index 0), every annotated query is a target.
Chunk prepare_eval(const Conversation& conv, const LinkSet* gold = nullptr,
                   std::size_t past_context = 100, std::size_t window = 50);

// minutes-of-day forward difference, wrapping at midnight
int minutes_between(int link_ts, int query_ts);

}  // namespace detangle
