#pragma once
// Synthetic next-word tasks with exact ground-truth distributions.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "scpr/data/vocab.hpp"

namespace scpr {

/// Non-negative fraction kept in lowest terms.
struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;

  Rational() = default;
  Rational(std::int64_t n, std::int64_t d);
  double value() const noexcept { return static_cast<double>(num) / static_cast<double>(den); }
  Rational operator+(const Rational& o) const;
  bool operator==(const Rational& o) const = default;
};

enum class SynthTask { kParallelogram, kListCompletion, kChoice };
enum class TargetMode { kDiagonal, kEdge };

std::string_view synth_task_name(SynthTask t) noexcept;
SynthTask parse_synth_task(std::string_view name);
std::string_view target_mode_name(TargetMode m) noexcept;
TargetMode parse_target_mode(std::string_view name);

struct SyntheticSpec {
  SynthTask task = SynthTask::kParallelogram;
  std::size_t n_groups = 10;
  std::size_t items_per_prompt = 2;
  /// Empty selects the built-in templates of the task.
  std::vector<std::string> templates;
  std::uint64_t seed = 1;
  TargetMode target_mode = TargetMode::kDiagonal;
};

struct SyntheticRecord {
  std::vector<std::string> context;
  /// Ground truth; probabilities sum to exactly 1.
  std::vector<std::pair<std::string, Rational>> target;
  /// diagonal, edge, list or choice.
  std::string split;
  /// Words that must receive no mass (listed items of list completion).
  std::vector<std::string> forbidden;
};

/// Four words a b c d with a:b :: c:d. Diagonal words are {a, d}, edge words
/// {a, b}.
struct Quadruple {
  std::string relation;
  std::array<std::string, 4> words;
};

/// Four whitespace-separated words per line; `#` starts a comment and a
/// comment of the form "# relation: NAME" labels the lines below it.
std::vector<Quadruple> parse_quadruples(std::istream& in, const std::string& source = "<input>");
std::vector<Quadruple> load_quadruples(const std::string& path);

struct Category {
  std::string name;
  std::vector<std::string> words;
};

/// Lines "name: w1 w2 ..." with `#` comments.
std::vector<Category> parse_lexicon(std::istream& in, const std::string& source = "<input>");
std::vector<Category> load_lexicon(const std::string& path);

/// True for relations whose members are places (capitals, cities).
bool is_place_relation(std::string_view relation) noexcept;

/// n_groups x templates records. Template placeholders {0} and {1} receive
/// the two target words in random order.
std::vector<SyntheticRecord> gen_parallelogram(const SyntheticSpec& spec,
                                               const std::vector<Quadruple>& quads);
/// Placeholder {items} receives items_per_prompt distinct words of one
/// category; mass is uniform over the category's unlisted words.
std::vector<SyntheticRecord> gen_list_completion(const SyntheticSpec& spec,
                                                 const std::vector<Category>& lexicon);
/// As list completion with mass uniform over the listed words.
std::vector<SyntheticRecord> gen_choice(const SyntheticSpec& spec,
                                        const std::vector<Category>& lexicon);

/// Vocabulary over record contexts, targets and forbidden words.
Vocab records_vocab(const std::vector<SyntheticRecord>& records);

/// One line per record: context words TAB id:prob,... TAB split TAB
/// forbidden ids (comma separated, possibly empty).
void write_records(std::ostream& out, const std::vector<SyntheticRecord>& records,
                   const Vocab& vocab);
std::vector<SyntheticRecord> read_records(std::istream& in, const Vocab& vocab,
                                          const std::string& source = "<input>");
/// PATH holds the records, PATH.vocab the vocabulary.
void save_records(const std::string& path, const std::vector<SyntheticRecord>& records);
std::vector<SyntheticRecord> load_records(const std::string& path, Vocab* vocab_out = nullptr);

}  // namespace scpr
