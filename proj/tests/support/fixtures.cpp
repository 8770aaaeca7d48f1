#include "fixtures.hpp"

#include <algorithm>
#include <map>

#include "dialfuse/error.hpp"
#include "dialfuse/text.hpp"

namespace dftest {

namespace {

const std::vector<std::string> kDays = {"monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"};
const std::vector<std::string> kStations = {"london kings cross", "peterborough", "ely", "stansted airport", "norwich",
                                            "bishops stortford"};

DBRecord rec(std::string domain, std::map<std::string, std::string> attrs) { return {std::move(domain), std::move(attrs)}; }

Database build_db() {
  Database db;
  struct R {
    const char *name, *area, *price, *food, *phone, *postcode, *address;
  };
  const R restaurants[] = {
      {"golden curry", "centre", "expensive", "indian", "01223329432", "cb12az", "mill road"},
      {"pizza hut city centre", "centre", "cheap", "italian", "01223323737", "cb21ab", "regent street"},
      {"the nirala", "north", "moderate", "indian", "01223360966", "cb43lf", "7 milton road"},
      {"royal spice", "north", "cheap", "indian", "01733553355", "cb41eh", "victoria avenue"},
      {"saigon city", "north", "expensive", "asian oriental", "01223356555", "cb43ll", "169 high street"},
      {"curry prince", "east", "moderate", "indian", "01223566388", "cb58jj", "451 newmarket road"},
      {"the missing sock", "east", "cheap", "international", "01223812660", "cb259aq", "finders corner"},
      {"frankie and bennys", "south", "expensive", "italian", "01223412430", "cb17dy", "clifton way"},
      {"nandos", "south", "cheap", "portuguese", "01223327908", "cb17dy", "cambridge leisure park"},
      {"la margherita", "west", "cheap", "italian", "01223315232", "cb30ad", "15 magdalene street"},
      {"prezzo", "west", "moderate", "italian", "01799521260", "cb30ad", "21 - 24 northampton road"},
      {"the gandhi", "centre", "cheap", "indian", "01223353942", "cb12az", "72 regent street"},
  };
  for (const auto& r : restaurants)
    db.add(rec("restaurant", {{"name", r.name},
                              {"area", r.area},
                              {"pricerange", r.price},
                              {"food", r.food},
                              {"phone", r.phone},
                              {"postcode", r.postcode},
                              {"address", r.address}}));
  struct H {
    const char *name, *area, *price, *type, *stars, *address, *phone;
  };
  const H hotels[] = {
      {"acorn guest house", "north", "moderate", "guesthouse", "4", "154 chesterton road", "01223353888"},
      {"alexander bed and breakfast", "centre", "cheap", "guesthouse", "4", "56 saint barnabas road", "01223525725"},
      {"gonville hotel", "centre", "expensive", "hotel", "3", "gonville place", "01223366611"},
      {"huntingdon marriott hotel", "west", "expensive", "hotel", "4", "kingfisher way", "01480446000"},
      {"a and b guest house", "east", "moderate", "guesthouse", "4", "124 tenison road", "01223315702"},
      {"cityroomz", "centre", "moderate", "hotel", "0", "sleeperz hotel", "01223304050"},
      {"express by holiday inn", "east", "expensive", "hotel", "2", "15 - 17 norman way", "01223866800"},
      {"allenbell", "east", "cheap", "guesthouse", "4", "517a coldham lane", "01223210353"},
  };
  for (const auto& h : hotels)
    db.add(rec("hotel", {{"name", h.name},
                         {"area", h.area},
                         {"pricerange", h.price},
                         {"type", h.type},
                         {"stars", h.stars},
                         {"address", h.address},
                         {"phone", h.phone}}));
  struct A {
    const char *name, *area, *type, *fee, *phone;
  };
  const A attractions[] = {
      {"kettles yard", "west", "museum", "free", "01223748100"},
      {"fitzwilliam museum", "centre", "museum", "free", "01223332900"},
      {"all saints church", "centre", "architecture", "free", "01223452587"},
      {"cherry hinton water play", "east", "park", "free", "01223446100"},
      {"milton country park", "north", "park", "free", "01223420060"},
      {"the junction", "south", "theatre", "unknown", "01223511511"},
      {"abbey pool and astroturf pitch", "east", "swimmingpool", "unknown", "01223902088"},
      {"whipple museum of the history of science", "centre", "museum", "free", "01223330906"},
  };
  for (const auto& a : attractions)
    db.add(rec("attraction",
               {{"name", a.name}, {"area", a.area}, {"type", a.type}, {"entrancefee", a.fee}, {"phone", a.phone}}));
  int n = 0;
  for (const auto& station : kStations)
    for (int dir = 0; dir < 2; ++dir)
      for (const auto& day : kDays)
        for (int slot = 0; slot < 2; ++slot) {
          ++n;
          int hour = 5 + (n * 7) % 17;
          char leave[6], arrive[6], id[8], price[16];
          std::snprintf(leave, sizeof leave, "%02d:%02d", hour, (n * 13) % 60);
          std::snprintf(arrive, sizeof arrive, "%02d:%02d", (hour + 1) % 24, (n * 13 + 27) % 60);
          std::snprintf(id, sizeof id, "tr%04d", 1000 + n * 37 % 9000);
          std::snprintf(price, sizeof price, "%d.%02d pounds", 4 + n % 20, (n * 10) % 100);
          db.add(rec("train", {{"trainid", id},
                               {"departure", dir == 0 ? "cambridge" : station},
                               {"destination", dir == 0 ? station : "cambridge"},
                               {"day", day},
                               {"leaveat", leave},
                               {"arriveby", arrive},
                               {"price", price}}));
        }
  return db;
}

Ontology build_ontology() {
  Ontology o;
  const Database& db = fixture_db();
  for (const auto& domain : db.domains())
    for (const auto& r : db.records(domain))
      for (const auto& [slot, value] : r.attributes) o.add(domain, slot, value);
  for (const auto& d : kDays) o.add("train", "day", d);
  return o;
}

struct Builder {
  Dialog d;
  BeliefState belief;

  void user(const std::string& domain, std::string text) {
    Turn t;
    t.speaker = Speaker::kUser;
    t.text = std::move(text);
    t.domain = domain;
    d.turns.push_back(std::move(t));
  }
  void system(const std::string& domain, std::string text, std::string delex) {
    Turn t;
    t.speaker = Speaker::kSystem;
    t.text = std::move(text);
    t.delex_text = std::move(delex);
    t.domain = domain;
    t.belief = belief;
    d.turns.push_back(std::move(t));
  }
};

const DBRecord& pick(const std::string& domain, SplitMix64& rng) {
  const auto& rs = fixture_db().records(domain);
  return rs[rng.below(rs.size())];
}

void add_domain(Builder& b, const std::string& domain, SplitMix64& rng, GoalCard& goal) {
  const DBRecord& r = pick(domain, rng);
  auto at = [&](const char* k) { return r.attributes.at(k); };
  DomainGoal g;
  if (domain == "restaurant") {
    bool with_food = rng.below(2) == 0;
    g.info = {{"area", at("area")}, {"pricerange", at("pricerange")}};
    if (with_food) g.info["food"] = at("food");
    for (const auto& [k, v] : g.info) b.belief.set(domain, k, v);
    b.user(domain, "i am looking for a " + at("pricerange") + " restaurant in the " + at("area") +
                       (with_food ? " serving " + at("food") + " food ." : " ."));
    b.system(domain, at("name") + " is a " + at("pricerange") + " " + at("food") + " restaurant in the " + at("area") + " .",
             "[restaurant_name] is a [value_pricerange] [value_food] restaurant in the [value_area] .");
    b.user(domain, "great , can i get the phone number and postcode ?");
    b.system(domain, "sure , the phone number is " + at("phone") + " and the postcode is " + at("postcode") + " .",
             "sure , the phone number is [restaurant_phone] and the postcode is [restaurant_postcode] .");
    g.reqt = {"phone", "postcode"};
  } else if (domain == "hotel") {
    g.info = {{"area", at("area")}, {"pricerange", at("pricerange")}, {"type", at("type")}};
    for (const auto& [k, v] : g.info) b.belief.set(domain, k, v);
    b.user(domain, "i need a " + at("type") + " in the " + at("area") + " in the " + at("pricerange") + " price range .");
    b.system(domain, "how about " + at("name") + " ? it has " + at("stars") + " stars .",
             "how about [hotel_name] ? it has [value_count] stars .");
    b.user(domain, "sounds good . what is the address ?");
    b.system(domain, "the address is " + at("address") + " .", "the address is [hotel_address] .");
    g.reqt = {"address"};
  } else if (domain == "attraction") {
    g.info = {{"area", at("area")}, {"type", at("type")}};
    for (const auto& [k, v] : g.info) b.belief.set(domain, k, v);
    b.user(domain, "are there any " + at("type") + " attractions in the " + at("area") + " ?");
    b.system(domain, at("name") + " is a " + at("type") + " in the " + at("area") + " .",
             "[attraction_name] is a [value_type] in the [value_area] .");
    b.user(domain, "what is the entrance fee and phone number ?");
    b.system(domain, "the entrance fee is " + at("entrancefee") + " and the phone is " + at("phone") + " .",
             "the entrance fee is [value_price] and the phone is [attraction_phone] .");
    g.reqt = {"entrancefee", "phone"};
  } else {
    g.info = {{"departure", at("departure")}, {"destination", at("destination")}, {"day", at("day")}};
    for (const auto& [k, v] : g.info) b.belief.set(domain, k, v);
    b.user(domain, "i need a train from " + at("departure") + " to " + at("destination") + " on " + at("day") + " .");
    b.system(domain, at("trainid") + " leaves at " + at("leaveat") + " and arrives by " + at("arriveby") + " .",
             "[train_id] leaves at [value_time] and arrives by [value_time] .");
    b.user(domain, "how much is a ticket ?");
    b.system(domain, "the price is " + at("price") + " .", "the price is [value_price] .");
    g.reqt = {"price"};
  }
  goal.domains[domain] = std::move(g);
}

std::string topic_of(std::uint64_t seed) { return topics()[seed % topics().size()]; }

// Words of the most recent context segment that name a topic, else a seeded one.
std::string topic_in(const GenRequest& r) {
  auto ctx = r.all(SegmentTag::kContext);
  for (auto it = ctx.rbegin(); it != ctx.rend(); ++it)
    for (const auto& t : topics())
      if (it->find(t) != std::string::npos) return t;
  return topic_of(r.seed);
}

}  // namespace

const Database& fixture_db() {
  static const Database db = build_db();
  return db;
}

const Ontology& fixture_ontology() {
  static const Ontology o = build_ontology();
  return o;
}

const std::vector<std::string>& topics() {
  static const std::vector<std::string> t = {"jazz music",    "mountain hiking", "old movies",    "board games",
                                             "baking bread",  "football",        "gardening",     "space travel",
                                             "photography",   "chess",           "poetry",        "video games"};
  return t;
}

Dialog make_tod_dialog(const std::string& id, int n_domains, std::uint64_t seed) {
  static const std::vector<std::string> all = {"restaurant", "hotel", "attraction", "train"};
  if (n_domains < 1 || n_domains > 4) throw ValidationError("n_domains must be 1..4");
  SplitMix64 rng(seed);
  std::vector<std::string> domains = all;
  for (std::size_t i = domains.size(); i > 1; --i) std::swap(domains[i - 1], domains[rng.below(i)]);
  domains.resize(static_cast<std::size_t>(n_domains));
  Builder b;
  b.d.id = id;
  GoalCard goal;
  for (const auto& domain : domains) add_domain(b, domain, rng, goal);
  b.user(domains.back(), "thank you , that is all i need .");
  b.system(domains.back(), "you are welcome , goodbye .", "you are welcome , goodbye .");
  b.d.goal_card = goal;
  return b.d;
}

DialogSet tod_fixture(std::size_t n, std::uint64_t seed) {
  DialogSet out;
  for (std::size_t i = 0; i < n; ++i) {
    std::string id = "mul" + std::to_string(1000 + i) + ".json";
    out.push_back(make_tod_dialog(id, 1 + static_cast<int>(i % 3), mix_seed(seed, id)));
  }
  return out;
}

SimBackends sim_backends(int goal_after) {
  SimBackends s;
  s.chat = std::make_shared<FunctionBackend>([](const GenRequest& r) {
    std::string persona = r.first(SegmentTag::kPersona);
    if (!persona.empty()) return "hi there ! " + persona + " lately i have been into " + topic_of(r.seed) + " .";
    return "by the way , have you ever tried " + topic_of(r.seed) + " ? it is my favourite hobby .";
  });
  s.user = std::make_shared<FunctionBackend>([goal_after](const GenRequest& r) {
    std::string goal = r.first(SegmentTag::kGoal);
    int system_replies = static_cast<int>(r.all(SegmentTag::kContext).size()) / 2;
    if (system_replies >= goal_after) return "anyway , i also need something about " + goal + " .";
    return "that sounds lovely , i enjoy " + topic_in(r) + " a lot .";
  });
  s.system = std::make_shared<FunctionBackend>([](const GenRequest& r) {
    return "oh nice , " + topic_in(r) + " is a wonderful way to relax .";
  });
  s.transition = std::make_shared<FunctionBackend>(
      [](const GenRequest&) { return std::string("sure , let me help you with that ."); });
  return s;
}

std::vector<IntentExample> intent_examples(std::size_t per_class, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<IntentExample> out;
  std::size_t tod = 0;
  while (tod < per_class) {
    Dialog d = make_tod_dialog("intent" + std::to_string(tod), 1 + static_cast<int>(rng.below(3)), rng.next());
    for (const auto& t : d.turns)
      if (t.speaker == Speaker::kUser && tod < per_class) {
        out.push_back({t.text, Mode::kTod, "fixture"});
        ++tod;
      }
  }
  const std::vector<std::string> frames = {
      "i have been really into {} lately .",      "do you like {} ? i think it is amazing .",
      "my weekend was all about {} .",            "have you ever tried {} ? it is so fun .",
      "what do you think about {} ?",             "i could talk about {} all day .",
      "my friends and i love {} .",               "honestly {} makes me so happy .",
  };
  for (std::size_t i = 0; i < per_class; ++i) {
    std::string f = frames[rng.below(frames.size())];
    f.replace(f.find("{}"), 2, topics()[rng.below(topics().size())]);
    out.push_back({f, Mode::kOdd, "fixture"});
  }
  return out;
}

const IntentDetector& fixture_detector() {
  static const IntentDetector d = train_detector(intent_examples(120, 11), DetectorConfig{}, 11);
  return d;
}

DialogSet fused_fixture(Setting setting, std::size_t n, std::uint64_t seed) {
  DialogSet tod = tod_fixture(n, seed);
  SynthesisConfig cfg;
  cfg.setting = setting;
  cfg.personas = default_personas();
  cfg.seed = seed;
  SimBackends b = sim_backends();
  SynthesisResult r = synthesize_corpus(tod, cfg, b.view(), &fixture_detector(), fixture_ontology());
  for (auto& d : r.dialogs)
    for (std::size_t i = 1; i < d.turns.size(); i += 2) {
      Turn& t = d.turns[i];
      if (t.mode != Mode::kOdd || t.is_transition) continue;
      for (const auto& topic : topics())
        if (t.text.find(topic) != std::string::npos) t.search_query = topic;
    }
  return r.dialogs;
}

MockSearchProvider fixture_search(const DialogSet& corpus) {
  MockSearchProvider p;
  for (const auto& d : corpus)
    for (const auto& t : d.turns)
      if (t.search_query)
        p.add(*t.search_query, {*t.search_query + " is enjoyed by many people", "beginners can start " + *t.search_query +
                                                                                  " with a friend"});
  return p;
}

}  // namespace dftest
