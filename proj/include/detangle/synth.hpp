#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "detangle/corpus.hpp"

namespace detangle {

// Synthetic chat generator. Conversations interleave a few concurrent
// threads in short blocks. Inside a thread every post addresses an earlier
// participant by name and replies to that user's most recent post; the first
// post of a thread is a self-link. Thread participants do not overlap while
// their threads are alive, so gold clusters coincide with generated threads.
struct SynthOptions {
  std::size_t n_convs = 20;
  std::size_t posts_per_conv = 160;
  std::size_t concurrent_threads = 5;
  std::size_t participants_per_thread = 2;
  std::size_t block_min = 2;
  std::size_t block_max = 4;
  std::size_t blocks_per_thread = 4;  // retire after this many visits
};

struct SynthConversation {
  std::string name;
  std::string log;
  std::string annotations;
};

std::vector<SynthConversation> synth_corpus(std::uint64_t seed, const SynthOptions& opt);

}  // namespace detangle
