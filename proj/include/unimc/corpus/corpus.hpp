#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "unimc/corpus/tokenizer.hpp"
#include "unimc/error.hpp"
#include "unimc/model/special_tokens.hpp"

namespace unimc::corpus {

using model::Role;

/// One persona sentence and whose persona it is.
struct Persona {
  Role owner = Role::USER;
  std::string text;

  auto operator<=>(const Persona&) const = default;
  bool operator==(const Persona&) const = default;

  std::string encode() const { return std::string(model::role_name(owner)) + ":" + text; }
};

enum class TurnKind { REVEALING, GROUNDED, NEUTRAL };

struct Turn {
  int index = 0;
  Role role = Role::USER;
  std::string text;
  std::vector<Persona> personas_used;
  std::vector<Persona> summary;  // personas this turn newly reveals

  TurnKind kind() const {
    if (!summary.empty()) return TurnKind::REVEALING;
    if (!personas_used.empty()) return TurnKind::GROUNDED;
    return TurnKind::NEUTRAL;
  }
};

/// A multi-session dialogue; session membership is index / turns_per_session.
struct Dialogue {
  std::string id;
  std::vector<Turn> turns;
  int turns_per_session = 8;

  int session_of(std::size_t turn) const { return static_cast<int>(turn) / turns_per_session; }
  bool same_session(std::size_t a, std::size_t b) const { return session_of(a) == session_of(b); }

  /// Personas revealed strictly before turn `t`, in reveal order.
  std::vector<Persona> seen_before(std::size_t t) const {
    std::vector<Persona> out;
    for (std::size_t i = 0; i < t && i < turns.size(); ++i)
      for (const auto& p : turns[i].summary)
        if (std::find(out.begin(), out.end(), p) == out.end()) out.push_back(p);
    return out;
  }

  /// Inventory of one speaker: everything that speaker reveals.
  std::vector<Persona> inventory(Role owner) const {
    std::vector<Persona> out;
    for (const auto& t : turns)
      for (const auto& p : t.summary)
        if (p.owner == owner) out.push_back(p);
    return out;
  }
};

struct CorpusManifest {
  int n_dialogues = 0;
  std::uint64_t seed = 0;
  std::string template_set = "default";
  int turns_per_session = 8;
  int total_turns = 0;
  int revealing_turns = 0;
  int grounded_turns = 0;
  int neutral_turns = 0;
  int user_turns = 0;
};

struct Corpus {
  std::vector<Dialogue> dialogues;
  CorpusManifest manifest;
};

// ---------------------------------------------------------------------------
// Templates

/// One attribute slot: canonical persona sentence plus the utterance patterns
/// that reveal or use it. `{}` marks the value.
struct PersonaTemplate {
  std::string slot;
  std::vector<std::string> values;
  std::string canonical;
  std::vector<std::string> user_reveals;
  std::string reveal_ack;       // bot reply to a user reveal
  std::string user_query;       // user turn that needs the user's persona
  std::string grounded_reply;   // bot reply using the user's persona
  std::string bot_question;     // user asks about the bot's persona
  std::string bot_reveal;       // first answer, reveals the bot persona
  std::string bot_grounded;     // later answers, recall the bot persona
};

struct NeutralExchange {
  std::string user;
  std::string bot;
};

struct TemplateSet {
  std::vector<PersonaTemplate> slots;
  std::vector<NeutralExchange> neutral;
};

inline std::string fill(std::string_view pattern, std::string_view value) {
  std::string out(pattern);
  const auto pos = out.find("{}");
  if (pos != std::string::npos) out.replace(pos, 2, value);
  return out;
}

inline const TemplateSet& default_templates() {
  static const TemplateSet set = [] {
    TemplateSet t;
    t.slots = {
        {"pet", {"cat", "dog", "parrot", "rabbit", "hamster", "turtle", "goldfish", "pony", "lizard", "ferret", "snake",
          "puppy"}, "i have a {}.",
         {"by the way, i have a {}.", "guess what, i got a {}."}, "oh, a {}! that is lovely.",
         "what should i buy at the pet shop?", "some toys for your {}.", "do you have a pet?",
         "yes, i have a {}.", "as i said, my {} is fine."},
        {"food", {"pizza", "sushi", "noodles", "tacos", "curry", "pasta", "ramen", "salad", "burgers", "dumplings",
          "paella", "waffles"}, "i like {}.",
         {"i really like {}.", "my favorite food is {}."}, "{} sounds tasty.", "what should i cook tonight?",
         "how about {}? you like it.", "what food do you like?", "i love {} a lot.",
         "as i said, i love {}."},
        {"hobby", {"hiking", "painting", "chess", "swimming", "cycling", "knitting", "dancing", "fishing",
          "gardening", "skiing", "surfing", "baking"}, "i enjoy {}.",
         {"i enjoy {} a lot.", "my hobby is {}."}, "{} is a great hobby.", "any plans for the weekend?",
         "you could do some {}.", "what do you do for fun?", "i enjoy {}.", "as i said, i enjoy {}."},
        {"hometown", {"paris", "tokyo", "boston", "cairo", "lima", "rome", "oslo", "denver", "seoul", "dublin",
          "madrid", "nairobi"}, "i am from {}.",
         {"i am from {}.", "i grew up in {}."}, "{} is a nice place.", "where should i travel next?",
         "visit {}, your hometown.", "where are you from?", "i am from {}.", "as i said, i am from {}."},
        {"job", {"nurse", "teacher", "chef", "pilot", "farmer", "baker", "lawyer", "dentist", "plumber",
          "writer", "banker", "doctor"}, "i work as a {}.",
         {"i work as a {}.", "my job? i am a {}."}, "being a {} sounds busy.", "i am so tired today.",
         "long shift as a {}?", "what is your job?", "i work as a {}.", "as i said, i am a {}."},
    };
    t.neutral = {
        {"hi, how are you?", "i am good, thanks!"},
        {"nice weather today.", "yes, it is sunny."},
        {"did you sleep well?", "yes, like a baby."},
        {"what a long day.", "time to relax then."},
        {"see you soon.", "bye, take care!"},
        {"tell me a joke.", "why did the chicken cross?"},
    };
    return t;
  }();
  return set;
}

inline const TemplateSet& template_set(const std::string& name) {
  if (name != "default") throw Error("unknown template set: " + name);
  return default_templates();
}

// ---------------------------------------------------------------------------
// Generation

struct GeneratorOptions {
  int sessions_per_dialogue = 2;
  int exchanges_per_session = 4;
  int user_personas = 3;
  int bot_personas = 2;
};

namespace detail_gen {

struct SlotValue {
  std::size_t slot;
  std::string value;
};

inline std::vector<SlotValue> draw_inventory(const TemplateSet& ts, int count, std::mt19937_64& rng) {
  std::vector<std::size_t> slots(ts.slots.size());
  for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = i;
  std::shuffle(slots.begin(), slots.end(), rng);
  std::vector<SlotValue> out;
  for (int i = 0; i < count && i < static_cast<int>(slots.size()); ++i) {
    const auto& vals = ts.slots[slots[i]].values;
    out.push_back({slots[i], vals[std::uniform_int_distribution<std::size_t>(0, vals.size() - 1)(rng)]});
  }
  return out;
}

inline std::size_t pick(std::mt19937_64& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

}  // namespace detail_gen

/// Deterministic corpus: a pure function of (n_dialogues, seed, template set).
inline Corpus generate_corpus(int n_dialogues, std::uint64_t seed, const std::string& set_name = "default",
                              const GeneratorOptions& opt = {}) {
  using namespace detail_gen;
  if (n_dialogues < 1) throw Error("generate_corpus: n_dialogues must be >= 1");
  const TemplateSet& ts = template_set(set_name);
  Corpus corpus;
  auto& man = corpus.manifest;
  man.n_dialogues = n_dialogues;
  man.seed = seed;
  man.template_set = set_name;
  man.turns_per_session = 2 * opt.exchanges_per_session;

  for (int d = 0; d < n_dialogues; ++d) {
    std::mt19937_64 rng(seed * 1000003ull + static_cast<std::uint64_t>(d));
    Dialogue dlg;
    std::ostringstream id;
    id << "d" << d;
    dlg.id = id.str();
    dlg.turns_per_session = man.turns_per_session;

    auto user_inv = draw_inventory(ts, opt.user_personas, rng);
    auto bot_inv = draw_inventory(ts, opt.bot_personas, rng);
    struct Revealed {
      Role owner;
      SlotValue sv;
      int exchange;
    };
    std::vector<Revealed> revealed;
    std::size_t next_user = 0, next_bot = 0;

    const int exchanges = opt.sessions_per_dialogue * opt.exchanges_per_session;
    for (int e = 0; e < exchanges; ++e) {
      const int session = e / opt.exchanges_per_session;
      const bool last_in_session = e % opt.exchanges_per_session == opt.exchanges_per_session - 1;
      std::vector<Revealed> groundable;
      for (const auto& r : revealed)
        if (r.exchange < e) groundable.push_back(r);

      // 0 reveal user, 1 reveal bot, 2 grounded, 3 neutral
      std::vector<double> w = session == 0 ? std::vector<double>{3, 2, 1, 1} : std::vector<double>{1, 1, 4, 1};
      if (next_user >= user_inv.size()) w[0] = 0;
      if (next_bot >= bot_inv.size() || last_in_session) w[1] = 0;
      if (groundable.empty()) w[2] = 0;
      const int kind = std::discrete_distribution<int>(w.begin(), w.end())(rng);

      Turn u, b;
      u.index = 2 * e;
      u.role = Role::USER;
      b.index = 2 * e + 1;
      b.role = Role::BOT;
      if (kind == 0) {
        const auto sv = user_inv[next_user++];
        const auto& tpl = ts.slots[sv.slot];
        u.text = fill(tpl.user_reveals[pick(rng, tpl.user_reveals.size())], sv.value);
        u.summary = {{Role::USER, fill(tpl.canonical, sv.value)}};
        b.text = fill(tpl.reveal_ack, sv.value);
        revealed.push_back({Role::USER, sv, e});
      } else if (kind == 1) {
        const auto sv = bot_inv[next_bot++];
        const auto& tpl = ts.slots[sv.slot];
        u.text = tpl.bot_question;
        b.text = fill(tpl.bot_reveal, sv.value);
        b.summary = {{Role::BOT, fill(tpl.canonical, sv.value)}};
        revealed.push_back({Role::BOT, sv, e});
      } else if (kind == 2) {
        const auto& r = groundable[pick(rng, groundable.size())];
        const auto& tpl = ts.slots[r.sv.slot];
        const Persona used{r.owner, fill(tpl.canonical, r.sv.value)};
        if (r.owner == Role::USER) {
          u.text = tpl.user_query;
          b.text = fill(tpl.grounded_reply, r.sv.value);
        } else {
          u.text = tpl.bot_question;
          b.text = fill(tpl.bot_grounded, r.sv.value);
        }
        u.personas_used = {used};
        b.personas_used = {used};
      } else {
        const auto& ne = ts.neutral[pick(rng, ts.neutral.size())];
        u.text = ne.user;
        b.text = ne.bot;
      }
      dlg.turns.push_back(std::move(u));
      dlg.turns.push_back(std::move(b));
    }
    corpus.dialogues.push_back(std::move(dlg));
  }

  for (const auto& dlg : corpus.dialogues) {
    for (const auto& t : dlg.turns) {
      ++man.total_turns;
      if (t.role == Role::USER) ++man.user_turns;
      switch (t.kind()) {
        case TurnKind::REVEALING: ++man.revealing_turns; break;
        case TurnKind::GROUNDED: ++man.grounded_turns; break;
        case TurnKind::NEUTRAL: ++man.neutral_turns; break;
      }
    }
  }
  return corpus;
}

/// Every persona sentence the template set can produce, for both owners.
inline std::vector<Persona> all_personas(const TemplateSet& ts) {
  std::vector<Persona> out;
  for (Role owner : {Role::USER, Role::BOT})
    for (const auto& tpl : ts.slots)
      for (const auto& v : tpl.values) out.push_back({owner, fill(tpl.canonical, v)});
  return out;
}

// ---------------------------------------------------------------------------
// File format: dialogue_id<TAB>turn_idx<TAB>role<TAB>text<TAB>personas_used<TAB>summary
// Persona lists are `owner:text` items joined by '|'.

namespace detail_io {

inline std::string join(const std::vector<Persona>& ps) {
  std::string out;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (i) out += '|';
    out += ps[i].encode();
  }
  return out;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline Role parse_role(const std::string& s, const std::string& where) {
  if (s == "user") return Role::USER;
  if (s == "bot") return Role::BOT;
  throw FormatError(where + ": unknown role '" + s + "'");
}

inline std::vector<Persona> parse_personas(const std::string& s, const std::string& where) {
  std::vector<Persona> out;
  if (s.empty()) return out;
  for (const auto& item : split(s, '|')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw FormatError(where + ": persona item without owner: '" + item + "'");
    out.push_back({parse_role(item.substr(0, colon), where), item.substr(colon + 1)});
  }
  return out;
}

}  // namespace detail_io

inline void write_corpus(const std::string& path, const Corpus& corpus) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write corpus " + path);
  for (const auto& dlg : corpus.dialogues)
    for (const auto& t : dlg.turns)
      os << dlg.id << '\t' << t.index << '\t' << model::role_name(t.role) << '\t' << t.text << '\t'
         << detail_io::join(t.personas_used) << '\t' << detail_io::join(t.summary) << '\n';
  if (!os) throw Error("write failed for corpus " + path);

  std::ofstream ms(path + ".manifest");
  const auto& m = corpus.manifest;
  ms << "n_dialogues=" << m.n_dialogues << "\nseed=" << m.seed << "\ntemplate_set=" << m.template_set
     << "\nturns_per_session=" << m.turns_per_session << "\ntotal_turns=" << m.total_turns
     << "\nrevealing_turns=" << m.revealing_turns << "\ngrounded_turns=" << m.grounded_turns
     << "\nneutral_turns=" << m.neutral_turns << "\nuser_turns=" << m.user_turns << '\n';
}

/// Read a corpus file. Session length comes from `path.manifest` when it
/// exists, otherwise `turns_per_session`.
inline Corpus read_corpus(const std::string& path, int turns_per_session = 8) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read corpus " + path);
  Corpus corpus;
  {
    std::ifstream ms(path + ".manifest");
    std::string line;
    while (ms && std::getline(ms, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const auto key = line.substr(0, eq);
      const auto val = line.substr(eq + 1);
      auto& m = corpus.manifest;
      if (key == "turns_per_session") turns_per_session = std::stoi(val);
      else if (key == "seed") m.seed = std::stoull(val);
      else if (key == "template_set") m.template_set = val;
    }
  }
  std::string line;
  std::size_t lineno = 0;
  std::map<std::string, std::size_t> index;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    const auto f = detail_io::split(line, '\t');
    if (f.size() != 6) throw FormatError(detail::concat(where, ": expected 6 tab-separated fields, got ", f.size()));
    auto [it, inserted] = index.try_emplace(f[0], corpus.dialogues.size());
    if (inserted) {
      corpus.dialogues.push_back({});
      corpus.dialogues.back().id = f[0];
      corpus.dialogues.back().turns_per_session = turns_per_session;
    }
    Turn t;
    try {
      t.index = std::stoi(f[1]);
    } catch (const std::exception&) {
      throw FormatError(where + ": bad turn index '" + f[1] + "'");
    }
    t.role = detail_io::parse_role(f[2], where);
    t.text = f[3];
    t.personas_used = detail_io::parse_personas(f[4], where);
    t.summary = detail_io::parse_personas(f[5], where);
    auto& dlg = corpus.dialogues[it->second];
    if (t.index != static_cast<int>(dlg.turns.size())) {
      throw FormatError(detail::concat(where, ": turn index ", t.index, " out of order"));
    }
    dlg.turns.push_back(std::move(t));
  }
  auto& m = corpus.manifest;
  m.n_dialogues = static_cast<int>(corpus.dialogues.size());
  m.turns_per_session = turns_per_session;
  for (const auto& dlg : corpus.dialogues)
    for (const auto& t : dlg.turns) {
      ++m.total_turns;
      if (t.role == Role::USER) ++m.user_turns;
      switch (t.kind()) {
        case TurnKind::REVEALING: ++m.revealing_turns; break;
        case TurnKind::GROUNDED: ++m.grounded_turns; break;
        case TurnKind::NEUTRAL: ++m.neutral_turns; break;
      }
    }
  return corpus;
}

}  // namespace unimc::corpus
