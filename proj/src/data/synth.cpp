#include "scpr/data/synth.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "scpr/core/error.hpp"
#include "scpr/data/corpus.hpp"

namespace scpr {

Rational::Rational(std::int64_t n, std::int64_t d) : num(n), den(d) {
  if (d <= 0 || n < 0) throw DataError("invalid probability fraction");
  const std::int64_t g = std::gcd(n, d);
  num = n / g;
  den = d / g;
}

Rational Rational::operator+(const Rational& o) const {
  const std::int64_t l = std::lcm(den, o.den);
  return {num * (l / den) + o.num * (l / o.den), l};
}

std::string_view synth_task_name(SynthTask t) noexcept {
  switch (t) {
    case SynthTask::kParallelogram: return "parallelogram";
    case SynthTask::kListCompletion: return "list";
    case SynthTask::kChoice: return "choice";
  }
  return "parallelogram";
}

SynthTask parse_synth_task(std::string_view name) {
  for (auto t : {SynthTask::kParallelogram, SynthTask::kListCompletion, SynthTask::kChoice})
    if (synth_task_name(t) == name) return t;
  throw ConfigError("unknown synthetic task '" + std::string(name) +
                    "' (expected parallelogram, list or choice)");
}

std::string_view target_mode_name(TargetMode m) noexcept {
  return m == TargetMode::kDiagonal ? "diagonal" : "edge";
}

TargetMode parse_target_mode(std::string_view name) {
  if (name == "diagonal") return TargetMode::kDiagonal;
  if (name == "edge") return TargetMode::kEdge;
  throw ConfigError("unknown target mode '" + std::string(name) + "' (expected diagonal or edge)");
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

const std::vector<std::string> kPlaceTemplates = {
    "I went to {0} and {1} before , and I love one of the places more , which is",
    "we spent a week in {0} and a week in {1} , and the place we want to visit again is",
    "my friend has lived in {0} and in {1} , and the city they talk about most is",
};

const std::vector<std::string> kPersonTemplates = {
    "I met the {0} and the {1} yesterday , and the one I like more is the",
    "the story is about a {0} and a {1} , and the hero of the story is the",
    "at dinner I sat between the {0} and the {1} , and the person I talked to was the",
};

const std::vector<std::string> kListTemplates = {
    "I like {items} , and",
    "we bought {items} , and",
};

const std::vector<std::string> kChoiceTemplates = {
    "there are {items} on the table , and I pick up the",
};

std::string replace_all(std::string s, std::string_view from, std::string_view to) {
  for (std::size_t p = s.find(from); p != std::string::npos; p = s.find(from, p + to.size()))
    s.replace(p, from.size(), to);
  return s;
}

std::vector<std::string> fill(const std::string& tmpl, std::string_view key, std::string_view value) {
  if (tmpl.find(key) == std::string::npos)
    throw ConfigError("template '" + tmpl + "' lacks placeholder " + std::string(key));
  return tokenize_words(replace_all(tmpl, key, value));
}

// Picks n_groups items cycling through shuffled passes over [0, n).
std::vector<std::size_t> group_order(std::size_t n, std::size_t groups, std::mt19937_64& rng) {
  std::vector<std::size_t> out, pass(n);
  while (out.size() < groups) {
    std::iota(pass.begin(), pass.end(), 0);
    std::shuffle(pass.begin(), pass.end(), rng);
    for (std::size_t i : pass)
      if (out.size() < groups) out.push_back(i);
  }
  return out;
}

std::vector<SyntheticRecord> gen_items(const SyntheticSpec& spec,
                                       const std::vector<Category>& lexicon, bool choice) {
  const std::size_t k = spec.items_per_prompt;
  if (k == 0) throw ConfigError("items_per_prompt must be >= 1");
  if (lexicon.empty()) throw DataError("category lexicon is empty");
  const std::size_t needed = choice ? k : k + 1;
  for (const auto& c : lexicon)
    if (c.words.size() < needed)
      throw ConfigError("category '" + c.name + "' has " + std::to_string(c.words.size()) +
                        " words, needs at least " + std::to_string(needed));
  const auto& templates =
      spec.templates.empty() ? (choice ? kChoiceTemplates : kListTemplates) : spec.templates;
  std::mt19937_64 rng(spec.seed);
  std::vector<SyntheticRecord> out;
  for (std::size_t ci : group_order(lexicon.size(), spec.n_groups, rng)) {
    const auto& cat = lexicon[ci];
    std::vector<std::string> words = cat.words;
    std::shuffle(words.begin(), words.end(), rng);
    const std::vector<std::string> listed(words.begin(), words.begin() + static_cast<std::ptrdiff_t>(k));
    std::string joined;
    for (std::size_t i = 0; i < k; ++i) joined += (i ? " , " : "") + listed[i];
    const std::vector<std::string> support =
        choice ? listed : std::vector<std::string>(words.begin() + static_cast<std::ptrdiff_t>(k), words.end());
    for (const auto& tmpl : templates) {
      SyntheticRecord r;
      r.context = fill(tmpl, "{items}", joined);
      r.split = choice ? "choice" : "list";
      for (const auto& w : support) r.target.emplace_back(w, Rational(1, static_cast<std::int64_t>(support.size())));
      if (!choice) r.forbidden = listed;
      out.push_back(std::move(r));
    }
  }
  return out;
}

double parse_prob(std::string_view s, const std::string& where) {
  if (auto slash = s.find('/'); slash != std::string_view::npos) {
    std::int64_t n = 0, d = 0;
    auto r1 = std::from_chars(s.data(), s.data() + slash, n);
    auto r2 = std::from_chars(s.data() + slash + 1, s.data() + s.size(), d);
    if (r1.ec != std::errc{} || r2.ec != std::errc{} || d <= 0)
      throw DataError(where + ": bad probability '" + std::string(s) + "'");
    return static_cast<double>(n) / static_cast<double>(d);
  }
  try {
    std::size_t used = 0;
    const double v = std::stod(std::string(s), &used);
    if (used != s.size()) throw DataError("");
    return v;
  } catch (const std::exception&) {
    throw DataError(where + ": bad probability '" + std::string(s) + "'");
  }
}

int parse_id(std::string_view s, const Vocab& vocab, const std::string& where) {
  int id = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), id);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size() || id < 0 ||
      static_cast<std::size_t>(id) >= vocab.size())
    throw DataError(where + ": bad token id '" + std::string(s) + "'");
  return id;
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

}  // namespace

bool is_place_relation(std::string_view relation) noexcept {
  return relation.starts_with("capital") || relation.starts_with("city");
}

std::vector<Quadruple> parse_quadruples(std::istream& in, const std::string& source) {
  std::vector<Quadruple> out;
  std::string relation = "unknown";
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t[0] == '#') {
      const std::string body = trim(std::string_view(t).substr(1));
      if (body.starts_with("relation:")) relation = trim(std::string_view(body).substr(9));
      continue;
    }
    const auto words = split_ws(t.substr(0, t.find('#')));
    if (words.size() != 4)
      throw DataError(source + ":" + std::to_string(lineno) + ": expected 4 words, got " +
                      std::to_string(words.size()));
    Quadruple q;
    q.relation = relation;
    std::copy(words.begin(), words.end(), q.words.begin());
    out.push_back(std::move(q));
  }
  if (out.empty()) throw DataError(source + ": no quadruples");
  return out;
}

std::vector<Quadruple> load_quadruples(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open quadruple file '" + path + "'");
  return parse_quadruples(in, path);
}

std::vector<Category> parse_lexicon(std::istream& in, const std::string& source) {
  std::vector<Category> out;
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    const std::string t = trim(line.substr(0, line.find('#')));
    if (t.empty()) continue;
    const auto colon = t.find(':');
    if (colon == std::string::npos || colon == 0)
      throw DataError(source + ":" + std::to_string(lineno) + ": expected 'name: words...'");
    Category c;
    c.name = trim(std::string_view(t).substr(0, colon));
    c.words = split_ws(t.substr(colon + 1));
    if (c.words.empty()) throw DataError(source + ":" + std::to_string(lineno) + ": empty category");
    out.push_back(std::move(c));
  }
  if (out.empty()) throw DataError(source + ": no categories");
  return out;
}

std::vector<Category> load_lexicon(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open lexicon '" + path + "'");
  return parse_lexicon(in, path);
}

std::vector<SyntheticRecord> gen_parallelogram(const SyntheticSpec& spec,
                                               const std::vector<Quadruple>& quads) {
  if (quads.empty()) throw DataError("no quadruples supplied");
  std::mt19937_64 rng(spec.seed);
  std::vector<SyntheticRecord> out;
  for (std::size_t qi : group_order(quads.size(), spec.n_groups, rng)) {
    const auto& q = quads[qi];
    const std::string& x = q.words[0];
    const std::string& y = spec.target_mode == TargetMode::kDiagonal ? q.words[3] : q.words[1];
    const auto& templates = !spec.templates.empty() ? spec.templates
                            : is_place_relation(q.relation) ? kPlaceTemplates
                                                            : kPersonTemplates;
    for (const auto& tmpl : templates) {
      const bool swap = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
      SyntheticRecord r;
      r.context = tokenize_words(
          replace_all(replace_all(tmpl, "{0}", swap ? y : x), "{1}", swap ? x : y));
      if (tmpl.find("{0}") == std::string::npos || tmpl.find("{1}") == std::string::npos)
        throw ConfigError("template '" + tmpl + "' needs placeholders {0} and {1}");
      r.split = std::string(target_mode_name(spec.target_mode));
      if (x == y) {
        r.target.emplace_back(x, Rational(1, 1));
      } else {
        r.target.emplace_back(x, Rational(1, 2));
        r.target.emplace_back(y, Rational(1, 2));
      }
      out.push_back(std::move(r));
    }
  }
  return out;
}

std::vector<SyntheticRecord> gen_list_completion(const SyntheticSpec& spec,
                                                 const std::vector<Category>& lexicon) {
  return gen_items(spec, lexicon, false);
}

std::vector<SyntheticRecord> gen_choice(const SyntheticSpec& spec,
                                        const std::vector<Category>& lexicon) {
  return gen_items(spec, lexicon, true);
}

Vocab records_vocab(const std::vector<SyntheticRecord>& records) {
  std::vector<std::vector<std::string>> docs;
  for (const auto& r : records) {
    docs.push_back(r.context);
    std::vector<std::string> extra;
    for (const auto& [w, p] : r.target) extra.push_back(w);
    extra.insert(extra.end(), r.forbidden.begin(), r.forbidden.end());
    docs.push_back(std::move(extra));
  }
  return Vocab::build(docs);
}

void write_records(std::ostream& out, const std::vector<SyntheticRecord>& records,
                   const Vocab& vocab) {
  auto known = [&](const std::string& w) {
    if (!vocab.contains(w)) throw DataError("word '" + w + "' missing from record vocabulary");
    return vocab.id(w);
  };
  for (const auto& r : records) {
    for (std::size_t i = 0; i < r.context.size(); ++i) out << (i ? " " : "") << r.context[i];
    out << '\t';
    for (std::size_t i = 0; i < r.target.size(); ++i) {
      const auto& [w, p] = r.target[i];
      out << (i ? "," : "") << known(w) << ':' << p.num;
      if (p.den != 1) out << '/' << p.den;
    }
    out << '\t' << r.split << '\t';
    for (std::size_t i = 0; i < r.forbidden.size(); ++i) out << (i ? "," : "") << known(r.forbidden[i]);
    out << '\n';
  }
}

std::vector<SyntheticRecord> read_records(std::istream& in, const Vocab& vocab,
                                          const std::string& source) {
  std::vector<SyntheticRecord> out;
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    const auto cols = split_on(line, '\t');
    if (cols.size() < 2) throw DataError(where + ": expected context TAB distribution");
    SyntheticRecord r;
    r.context = tokenize_words(cols[0]);
    double total = 0;
    for (const auto& item : split_on(cols[1], ',')) {
      const auto colon = item.find(':');
      if (colon == std::string::npos) throw DataError(where + ": bad target entry '" + item + "'");
      const int id = parse_id(std::string_view(item).substr(0, colon), vocab, where);
      const std::string ps = item.substr(colon + 1);
      const double p = parse_prob(ps, where);
      if (!(p >= 0)) throw DataError(where + ": negative probability");
      total += p;
      // Decimal probabilities are kept as a fraction over 10^12.
      Rational q;
      if (auto slash = ps.find('/'); slash != std::string::npos)
        q = Rational(std::stoll(ps.substr(0, slash)), std::stoll(ps.substr(slash + 1)));
      else
        q = Rational(static_cast<std::int64_t>(std::llround(p * 1e12)), 1000000000000LL);
      r.target.emplace_back(vocab.word(id), q);
    }
    if (std::abs(total - 1.0) > 1e-6)
      throw DataError(where + ": target distribution sums to " + std::to_string(total));
    r.split = cols.size() > 2 && !cols[2].empty() ? cols[2] : "all";
    if (cols.size() > 3 && !cols[3].empty())
      for (const auto& f : split_on(cols[3], ',')) r.forbidden.push_back(vocab.word(parse_id(f, vocab, where)));
    out.push_back(std::move(r));
  }
  if (out.empty()) throw DataError(source + ": no records");
  return out;
}

void save_records(const std::string& path, const std::vector<SyntheticRecord>& records) {
  const Vocab vocab = records_vocab(records);
  vocab.save(path + ".vocab");
  std::ofstream out(path);
  if (!out) throw DataError("cannot write records file '" + path + "'");
  write_records(out, records, vocab);
  if (!out) throw DataError("failed writing records file '" + path + "'");
}

std::vector<SyntheticRecord> load_records(const std::string& path, Vocab* vocab_out) {
  Vocab vocab = Vocab::load(path + ".vocab");
  std::ifstream in(path);
  if (!in) throw DataError("cannot open records file '" + path + "'");
  auto records = read_records(in, vocab, path);
  if (vocab_out) *vocab_out = std::move(vocab);
  return records;
}

}  // namespace scpr
