#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace engage {

enum class Speaker { human, bot, unknown };
enum class DialogueSource { human_human, human_bot };

struct Utterance {
    std::string text;
    Speaker speaker = Speaker::unknown;
    std::size_t turn_index = 0;
};

/// A dialogue with its conversation-level engagement rating on the 0..5 scale.
struct Conversation {
    std::string id;
    std::vector<Utterance> utterances;
    std::optional<double> engagement_score;
    DialogueSource source = DialogueSource::human_bot;
};

struct QueryResponsePair {
    std::string pair_id;
    std::string query;
    std::string response;
    std::optional<double> raw_score;
    std::optional<int> label;
    std::optional<std::string> origin_conversation;
};

struct AnnotationRecord {
    std::string pair_id;
    std::string annotator_id;
    int rating = 0;
};

struct DatasetSplit {
    std::vector<QueryResponsePair> train;
    std::vector<QueryResponsePair> valid;
    std::vector<QueryResponsePair> test;
    std::uint64_t seed = 0;
};

struct SplitRatios {
    double train = 0.6;
    double valid = 0.2;
    double test = 0.2;
};

struct PropagationResult {
    std::vector<QueryResponsePair> pairs;
    /// Conversations dropped because they carry no engagement score.
    std::size_t skipped = 0;
};

/// Counts per integer score 0..5.
using ScoreHistogram = std::array<std::size_t, 6>;

inline constexpr double kMinEngagement = 0.0;
inline constexpr double kMaxEngagement = 5.0;
/// Scores at or below this value are "not engaging".
inline constexpr double kEngagementThreshold = 2.0;

// ConvAI-shaped dialogue dumps: newline-delimited JSON objects, or one JSON
// array of the same objects.
std::vector<Conversation> parse_convai(const std::filesystem::path& path);
std::vector<Conversation> parse_convai(std::istream& in);

/// Sliding window over consecutive non-blank turns; every pair inherits the
/// conversation score.
std::vector<QueryResponsePair> pair_adjacent_turns(const Conversation& conv);

PropagationResult propagate_scores(std::span<const Conversation> convs);

int binarize(double raw_score);

/// Sets `label` from `raw_score` on every pair that has one.
void assign_labels(std::span<QueryResponsePair> pairs);

DatasetSplit make_splits(std::vector<QueryResponsePair> pairs, SplitRatios ratios,
                         std::uint64_t seed);

/// Per-pair arithmetic mean of the ratings.
std::map<std::string, double> aggregate_annotations(std::span<const AnnotationRecord> records);

/// Mean rating of one pair; throws when the pair has no records.
double mean_rating(std::span<const AnnotationRecord> records, const std::string& pair_id);

double normalize_rating(double r, double lo, double hi);

// Turn-per-line text with blank lines between dialogues. A line containing
// "__eou__" markers is read as a whole dialogue on one line.
std::vector<QueryResponsePair> parse_dailydialog(const std::filesystem::path& path);
std::vector<QueryResponsePair> parse_dailydialog(std::istream& in, const std::string& source_name);

ScoreHistogram conversation_histogram(std::span<const Conversation> convs);
ScoreHistogram pair_histogram(std::span<const QueryResponsePair> pairs);

/// Label-0 and label-1 totals after binarizing a score histogram.
std::array<std::size_t, 2> binarized_totals(const ScoreHistogram& histogram);

// Pairs on disk: one JSON object per line.
void write_pairs_jsonl(std::ostream& out, std::span<const QueryResponsePair> pairs);
std::vector<QueryResponsePair> read_pairs_jsonl(std::istream& in);
std::vector<QueryResponsePair> read_pairs_jsonl(const std::filesystem::path& path);

// Annotation CSV with header pair_id,annotator_id,rating.
std::vector<AnnotationRecord> read_annotations_csv(std::istream& in);
std::vector<AnnotationRecord> read_annotations_csv(const std::filesystem::path& path);

}  // namespace engage
