#include "detangle/synth.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "detangle/rng.hpp"

namespace detangle {

namespace {

const std::vector<std::string> kUsers = {"alice",  "bruno", "clara", "dmitri", "elena",
                                         "felix",  "gina",  "henry", "irina",  "jonas"};

const std::vector<std::string> kTopics = {
    "kernel", "printer", "wifi",    "grub",   "docker", "python", "firefox", "audio",
    "nvidia", "ssh",     "backup",  "mirror", "fonts",  "cmake",  "vim",     "zsh"};

const std::vector<std::string> kDetails = {
    "crash",  "panic",  "stale",  "flag",    "cache",  "probe",  "patch",  "queue",
    "mount",  "socket", "daemon", "driver",  "locale", "config", "branch", "commit",
    "module", "packet", "shell",  "prompt",  "theme",  "panel",  "cursor", "buffer",
    "device", "thread", "signal", "timer",   "token",  "quota",  "index",  "merge",
    "splash", "swap",   "tweak",  "verbose", "window", "yield",  "zoom",   "array"};

const std::vector<std::string> kFillers = {"ok", "hm", "so", "well", "right", "now"};

struct LiveThread {
  std::vector<std::size_t> users;      // indices into kUsers, exclusive while live
  std::string topic;
  std::vector<std::size_t> posts;      // global indices, ascending
  std::size_t blocks_done = 0;
  std::size_t next_author = 0;
};

struct Builder {
  std::ostringstream log;
  std::ostringstream annot;
  std::vector<std::size_t> last_post_by_user;  // index into kUsers -> global post
  std::size_t n = 0;
  int minute = 240;

  void emit(std::size_t user, const std::vector<std::string>& tokens, std::size_t link) {
    char stamp[16];
    std::snprintf(stamp, sizeof stamp, "[%02d:%02d]", (minute / 60) % 24, minute % 60);
    log << stamp << " <" << kUsers[user] << ">";
    for (const std::string& t : tokens) log << ' ' << t;
    log << '\n';
    annot << n << ' ' << link << '\n';
    last_post_by_user[user] = n;
    ++n;
    ++minute;
  }
};

}  // namespace

std::vector<SynthConversation> synth_corpus(std::uint64_t seed, const SynthOptions& opt) {
  if (opt.concurrent_threads * opt.participants_per_thread > kUsers.size())
    throw std::runtime_error("synth: not enough users for disjoint thread participants");
  Rng master(seed);
  std::vector<SynthConversation> out;
  for (std::size_t ci = 0; ci < opt.n_convs; ++ci) {
    Rng rng = master.fork(ci + 1);
    Builder b;
    b.last_post_by_user.assign(kUsers.size(), static_cast<std::size_t>(-1));
    b.minute = 240 + static_cast<int>(ci % 7) * 31;

    std::vector<bool> user_busy(kUsers.size(), false);
    std::vector<LiveThread> live;
    std::size_t topic_cursor = rng.uniform_int(0, static_cast<int>(kTopics.size()) - 1);

    auto spawn_thread = [&]() -> bool {
      std::vector<std::size_t> free_users;
      for (std::size_t u = 0; u < kUsers.size(); ++u)
        if (!user_busy[u]) free_users.push_back(u);
      if (free_users.size() < opt.participants_per_thread) return false;
      rng.shuffle(free_users);
      LiveThread t;
      for (std::size_t k = 0; k < opt.participants_per_thread; ++k) {
        t.users.push_back(free_users[k]);
        user_busy[free_users[k]] = true;
      }
      t.topic = kTopics[topic_cursor % kTopics.size()];
      topic_cursor += 1 + static_cast<std::size_t>(rng.uniform_int(0, 2));
      // opening post: a self-link
      std::size_t author = t.users[0];
      std::vector<std::string> tokens = {t.topic, rng.pick(kDetails), rng.pick(kFillers)};
      t.posts.push_back(b.n);
      b.emit(author, tokens, b.n);
      t.next_author = 1 % t.users.size();
      live.push_back(std::move(t));
      return true;
    };

    auto retire_thread = [&](std::size_t idx) {
      for (std::size_t u : live[idx].users) user_busy[u] = false;
      live.erase(live.begin() + static_cast<std::ptrdiff_t>(idx));
    };

    std::size_t last_thread = static_cast<std::size_t>(-1);
    while (b.n < opt.posts_per_conv) {
      while (live.size() < opt.concurrent_threads && b.n < opt.posts_per_conv)
        if (!spawn_thread()) break;
      if (b.n >= opt.posts_per_conv) break;
      // visit the least recently active thread that is not the one just done
      std::size_t pick = 0;
      std::size_t oldest = static_cast<std::size_t>(-1);
      for (std::size_t k = 0; k < live.size(); ++k) {
        if (live.size() > 1 && k == last_thread) continue;
        if (live[k].posts.back() < oldest) {
          oldest = live[k].posts.back();
          pick = k;
        }
      }
      LiveThread& t = live[pick];
      last_thread = pick;
      std::size_t block =
          static_cast<std::size_t>(rng.uniform_int(static_cast<int>(opt.block_min),
                                                   static_cast<int>(opt.block_max)));
      for (std::size_t k = 0; k < block && b.n < opt.posts_per_conv; ++k) {
        std::size_t author = t.users[t.next_author];
        t.next_author = (t.next_author + 1) % t.users.size();
        // address a participant whose latest post lies in this thread, so the
        // reply never bridges two live threads
        std::vector<std::size_t> addressable;
        for (std::size_t u : t.users)
          if (u != author && b.last_post_by_user[u] != static_cast<std::size_t>(-1) &&
              b.last_post_by_user[u] >= t.posts.front())
            addressable.push_back(u);
        if (addressable.empty()) {
          // thread opener not yet answered by anyone else; talk to the opener
          addressable.push_back(t.users[0]);
        }
        std::size_t target = addressable[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<int>(addressable.size()) - 1))];
        std::size_t link = b.last_post_by_user[target];
        std::vector<std::string> tokens = {kUsers[target] + ":"};
        if (rng.bernoulli(0.6)) tokens.push_back(t.topic);
        tokens.push_back(rng.pick(kDetails));
        if (rng.bernoulli(0.4)) tokens.push_back(rng.pick(kFillers));
        t.posts.push_back(b.n);
        b.emit(author, tokens, link);
      }
      t.blocks_done += 1;
      if (t.blocks_done >= opt.blocks_per_thread) retire_thread(pick);
    }

    SynthConversation conv;
    char name[32];
    std::snprintf(name, sizeof name, "synth_%03zu", ci);
    conv.name = name;
    conv.log = b.log.str();
    conv.annotations = b.annot.str();
    out.push_back(std::move(conv));
  }
  return out;
}

}  // namespace detangle
