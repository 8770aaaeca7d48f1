#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "dialfuse/backends.hpp"
#include "dialfuse/corpus.hpp"
#include "dialfuse/intent.hpp"
#include "dialfuse/knowledge.hpp"
#include "dialfuse/synthesis.hpp"

namespace dftest {

using namespace dialfuse;

// Small restaurant / hotel / attraction / train database.
const Database& fixture_db();
// Every attribute value of fixture_db() plus the weekday list.
const Ontology& fixture_ontology();

// MultiWOZ-like TOD dialog over n_domains (1..4) distinct domains. Every
// domain opens with a user turn naming goal-slot values; system turns carry
// the cumulative belief and delexicalized text; the goal card asks for the
// entity's contact details.
Dialog make_tod_dialog(const std::string& id, int n_domains, std::uint64_t seed);
// n dialogs cycling through 1, 2 and 3 domains.
DialogSet tod_fixture(std::size_t n, std::uint64_t seed);

// Chit-chat topics that never collide with database values.
const std::vector<std::string>& topics();

// Request-driven scripted backends: every reply is a pure function of the
// request. The user simulator mentions the goal once the snippet holds
// `goal_after` system replies.
struct SimBackends {
  std::shared_ptr<Backend> chat, user, system, transition;
  SynthesisBackends view() const { return {chat.get(), user.get(), system.get(), transition.get()}; }
};
SimBackends sim_backends(int goal_after = 2);

std::vector<IntentExample> intent_examples(std::size_t per_class, std::uint64_t seed);
const IntentDetector& fixture_detector();

// TOD fixture run through synthesis, with search annotations on the
// knowledge-seeking ODD system turns.
DialogSet fused_fixture(Setting setting, std::size_t n, std::uint64_t seed);
// Snippets for every annotated query in the corpus.
MockSearchProvider fixture_search(const DialogSet& corpus);

}  // namespace dftest
