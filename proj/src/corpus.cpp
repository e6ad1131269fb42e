#include "engage/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "engage/csv.hpp"
#include "engage/error.hpp"
#include "engage/text.hpp"

namespace engage {

using nlohmann::json;

namespace {

std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open '" + path.string() + "': file not found or unreadable");
    return in;
}

void check_engagement_range(double score, const std::string& what) {
    if (!std::isfinite(score) || score < kMinEngagement || score > kMaxEngagement) {
        std::ostringstream msg;
        msg << what << ": engagement score " << score << " outside [0, 5]";
        throw ValidationError(msg.str());
    }
}

std::string record_name(const json& record, std::size_t ordinal) {
    for (const char* key : {"id", "dialogId"}) {
        auto it = record.find(key);
        if (it != record.end()) return it->is_string() ? it->get<std::string>() : it->dump();
    }
    return "#" + std::to_string(ordinal);
}

std::string user_id_of(const json& value) {
    if (value.is_string()) return value.get<std::string>();
    if (value.is_number()) return value.dump();
    return {};
}

Conversation conversation_from_json(const json& record, std::size_t ordinal) {
    if (!record.is_object()) throw ParseError("convai record #" + std::to_string(ordinal) + ": not a JSON object");
    Conversation conv;
    conv.id = record_name(record, ordinal);
    auto fail = [&](const std::string& why) -> ParseError {
        return ParseError("convai record '" + conv.id + "': " + why);
    };

    std::unordered_map<std::string, Speaker> speakers;
    bool any_bot = false;
    if (auto users = record.find("users"); users != record.end()) {
        if (!users->is_array()) throw fail("'users' is not an array");
        for (const auto& user : *users) {
            if (user.is_object()) {
                std::string id = user_id_of(user.value("id", json()));
                std::string type = to_lower(user.value("userType", std::string()));
                Speaker sp = Speaker::unknown;
                if (type.find("bot") != std::string::npos) {
                    sp = Speaker::bot;
                    any_bot = true;
                } else if (type.find("human") != std::string::npos || type.find("user") != std::string::npos) {
                    sp = Speaker::human;
                }
                speakers[id] = sp;
            } else if (user.is_string()) {
                speakers[user.get<std::string>()] = Speaker::unknown;
            } else {
                throw fail("malformed entry in 'users'");
            }
        }
    }
    conv.source = any_bot ? DialogueSource::human_bot : DialogueSource::human_human;

    auto thread = record.find("thread");
    if (thread == record.end() || !thread->is_array()) throw fail("missing 'thread' array");
    std::size_t turn = 0;
    for (const auto& msg : *thread) {
        if (!msg.is_object()) throw fail("malformed thread entry");
        auto text = msg.find("text");
        if (text == msg.end() || !text->is_string()) throw fail("thread entry without string 'text'");
        Utterance u;
        u.text = text->get<std::string>();
        u.turn_index = turn++;
        if (auto uid = msg.find("userId"); uid != msg.end()) {
            auto sp = speakers.find(user_id_of(*uid));
            if (sp != speakers.end()) u.speaker = sp->second;
        }
        conv.utterances.push_back(std::move(u));
    }

    if (auto evals = record.find("evaluation"); evals != record.end() && !evals->is_null()) {
        if (!evals->is_array()) throw fail("'evaluation' is not an array");
        std::vector<double> ratings;
        for (const auto& ev : *evals) {
            if (!ev.is_object()) throw fail("malformed evaluation entry");
            auto eng = ev.find("engagement");
            if (eng == ev.end() || eng->is_null()) continue;
            if (!eng->is_number()) throw fail("non-numeric engagement rating");
            double score = eng->get<double>();
            check_engagement_range(score, "convai record '" + conv.id + "'");
            Speaker rater = Speaker::unknown;
            if (auto uid = ev.find("userId"); uid != ev.end()) {
                auto sp = speakers.find(user_id_of(*uid));
                if (sp != speakers.end()) rater = sp->second;
            }
            // Only the human's opinion counts in human-bot dialogues.
            if (conv.source == DialogueSource::human_bot && rater == Speaker::bot) continue;
            ratings.push_back(score);
            if (conv.source == DialogueSource::human_bot) break;
        }
        if (!ratings.empty())
            conv.engagement_score = std::accumulate(ratings.begin(), ratings.end(), 0.0) / ratings.size();
    }
    return conv;
}

std::size_t histogram_bin(double score) {
    return static_cast<std::size_t>(std::clamp(std::floor(score + 0.5), 0.0, 5.0));
}

}  // namespace

std::vector<Conversation> parse_convai(std::istream& in) {
    std::vector<Conversation> out;
    // Skip leading whitespace to tell an array dump from line-delimited records.
    in >> std::ws;
    if (in.peek() == '[') {
        json doc;
        try {
            doc = json::parse(in);
        } catch (const json::parse_error& e) {
            throw ParseError(std::string("convai array dump: ") + e.what());
        }
        std::size_t ordinal = 0;
        for (const auto& record : doc) out.push_back(conversation_from_json(record, ordinal++));
        return out;
    }
    std::string line;
    std::size_t ordinal = 0;
    while (std::getline(in, line)) {
        if (is_blank(line)) continue;
        json record;
        try {
            record = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError("convai record #" + std::to_string(ordinal) + ": " + e.what());
        }
        out.push_back(conversation_from_json(record, ordinal++));
    }
    return out;
}

std::vector<Conversation> parse_convai(const std::filesystem::path& path) {
    auto in = open_input(path);
    return parse_convai(in);
}

std::vector<QueryResponsePair> pair_adjacent_turns(const Conversation& conv) {
    std::vector<const Utterance*> turns;
    for (const auto& u : conv.utterances)
        if (!is_blank(u.text)) turns.push_back(&u);

    std::vector<QueryResponsePair> pairs;
    for (std::size_t i = 0; i + 1 < turns.size(); ++i) {
        QueryResponsePair p;
        p.pair_id = conv.id + ":" + std::to_string(i);
        p.query = std::string(trim(turns[i]->text));
        p.response = std::string(trim(turns[i + 1]->text));
        p.raw_score = conv.engagement_score;
        p.origin_conversation = conv.id;
        pairs.push_back(std::move(p));
    }
    return pairs;
}

PropagationResult propagate_scores(std::span<const Conversation> convs) {
    PropagationResult result;
    for (const auto& conv : convs) {
        if (!conv.engagement_score) {
            ++result.skipped;
            continue;
        }
        check_engagement_range(*conv.engagement_score, "conversation '" + conv.id + "'");
        auto pairs = pair_adjacent_turns(conv);
        std::move(pairs.begin(), pairs.end(), std::back_inserter(result.pairs));
    }
    return result;
}

int binarize(double raw_score) {
    check_engagement_range(raw_score, "binarize");
    return raw_score <= kEngagementThreshold ? 0 : 1;
}

void assign_labels(std::span<QueryResponsePair> pairs) {
    for (auto& p : pairs)
        if (p.raw_score) p.label = binarize(*p.raw_score);
}

DatasetSplit make_splits(std::vector<QueryResponsePair> pairs, SplitRatios ratios, std::uint64_t seed) {
    if (ratios.train < 0 || ratios.valid < 0 || ratios.test < 0 ||
        std::abs(ratios.train + ratios.valid + ratios.test - 1.0) > 1e-9)
        throw ValidationError("split ratios must be non-negative and sum to 1");
    const std::size_t n = pairs.size();
    if (n < 3) throw ValidationError("make_splits: need at least 3 pairs, got " + std::to_string(n));

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    auto n_train = static_cast<std::size_t>(std::llround(ratios.train * n));
    auto n_valid = static_cast<std::size_t>(std::llround(ratios.valid * n));
    n_train = std::min(n_train, n);
    n_valid = std::min(n_valid, n - n_train);

    DatasetSplit split;
    split.seed = seed;
    for (std::size_t k = 0; k < n; ++k) {
        auto& dest = k < n_train ? split.train : (k < n_train + n_valid ? split.valid : split.test);
        dest.push_back(std::move(pairs[order[k]]));
    }
    return split;
}

std::map<std::string, double> aggregate_annotations(std::span<const AnnotationRecord> records) {
    std::map<std::string, std::pair<double, std::size_t>> sums;
    for (const auto& r : records) {
        if (r.rating < 1 || r.rating > 5)
            throw ValidationError("annotation for '" + r.pair_id + "': rating " + std::to_string(r.rating) +
                                  " outside 1..5");
        auto& [sum, count] = sums[r.pair_id];
        sum += r.rating;
        ++count;
    }
    std::map<std::string, double> means;
    for (const auto& [id, acc] : sums) means[id] = acc.first / static_cast<double>(acc.second);
    return means;
}

double mean_rating(std::span<const AnnotationRecord> records, const std::string& pair_id) {
    double sum = 0;
    std::size_t count = 0;
    for (const auto& r : records) {
        if (r.pair_id != pair_id) continue;
        if (r.rating < 1 || r.rating > 5) throw ValidationError("rating outside 1..5 for '" + pair_id + "'");
        sum += r.rating;
        ++count;
    }
    if (count == 0) throw ValidationError("no annotation records for pair '" + pair_id + "'");
    return sum / static_cast<double>(count);
}

double normalize_rating(double r, double lo, double hi) {
    if (!(lo < hi)) throw ValidationError("normalize_rating: lo must be below hi");
    if (!(r >= lo && r <= hi)) {
        std::ostringstream msg;
        msg << "normalize_rating: " << r << " outside [" << lo << ", " << hi << "]";
        throw ValidationError(msg.str());
    }
    return (r - lo) / (hi - lo);
}

std::vector<QueryResponsePair> parse_dailydialog(std::istream& in, const std::string& source_name) {
    std::vector<QueryResponsePair> pairs;
    std::size_t dialogue = 0;
    Conversation conv;
    auto flush = [&] {
        if (!conv.utterances.empty()) {
            conv.id = source_name + ":" + std::to_string(dialogue++);
            auto more = pair_adjacent_turns(conv);
            std::move(more.begin(), more.end(), std::back_inserter(pairs));
        }
        conv.utterances.clear();
    };
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (is_blank(line)) {
            flush();
            continue;
        }
        if (line.find("__eou__") != std::string::npos) {
            flush();
            std::string_view rest(line);
            while (!rest.empty()) {
                auto cut = rest.find("__eou__");
                auto turn = trim(rest.substr(0, cut));
                if (!turn.empty()) conv.utterances.push_back({std::string(turn), Speaker::human, conv.utterances.size()});
                if (cut == std::string_view::npos) break;
                rest.remove_prefix(cut + 7);
            }
            flush();
            continue;
        }
        conv.utterances.push_back({std::string(trim(line)), Speaker::human, conv.utterances.size()});
    }
    flush();
    return pairs;
}

std::vector<QueryResponsePair> parse_dailydialog(const std::filesystem::path& path) {
    auto in = open_input(path);
    return parse_dailydialog(in, path.stem().string());
}

ScoreHistogram conversation_histogram(std::span<const Conversation> convs) {
    ScoreHistogram h{};
    for (const auto& c : convs)
        if (c.engagement_score) ++h[histogram_bin(*c.engagement_score)];
    return h;
}

ScoreHistogram pair_histogram(std::span<const QueryResponsePair> pairs) {
    ScoreHistogram h{};
    for (const auto& p : pairs)
        if (p.raw_score) ++h[histogram_bin(*p.raw_score)];
    return h;
}

std::array<std::size_t, 2> binarized_totals(const ScoreHistogram& histogram) {
    std::array<std::size_t, 2> totals{};
    for (std::size_t score = 0; score < histogram.size(); ++score)
        totals[binarize(static_cast<double>(score))] += histogram[score];
    return totals;
}

void write_pairs_jsonl(std::ostream& out, std::span<const QueryResponsePair> pairs) {
    for (const auto& p : pairs) {
        json j = {{"pair_id", p.pair_id}, {"query", p.query}, {"response", p.response}};
        if (p.raw_score) j["raw_score"] = *p.raw_score;
        if (p.label) j["label"] = *p.label;
        if (p.origin_conversation) j["origin_conversation"] = *p.origin_conversation;
        out << j.dump() << '\n';
    }
}

std::vector<QueryResponsePair> read_pairs_jsonl(std::istream& in) {
    std::vector<QueryResponsePair> pairs;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (is_blank(line)) continue;
        auto where = "pairs line " + std::to_string(lineno);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(where + ": " + e.what());
        }
        QueryResponsePair p;
        try {
            p.pair_id = j.at("pair_id").get<std::string>();
            p.query = j.at("query").get<std::string>();
            p.response = j.at("response").get<std::string>();
            if (j.contains("raw_score") && !j["raw_score"].is_null()) p.raw_score = j["raw_score"].get<double>();
            if (j.contains("label") && !j["label"].is_null()) p.label = j["label"].get<int>();
            if (j.contains("origin_conversation") && !j["origin_conversation"].is_null())
                p.origin_conversation = j["origin_conversation"].get<std::string>();
        } catch (const json::exception& e) {
            throw ParseError(where + ": " + e.what());
        }
        if (p.label && *p.label != 0 && *p.label != 1) throw ValidationError(where + ": label must be 0 or 1");
        if (p.raw_score && p.label && binarize(*p.raw_score) != *p.label)
            throw ValidationError(where + ": label disagrees with raw_score");
        pairs.push_back(std::move(p));
    }
    return pairs;
}

std::vector<QueryResponsePair> read_pairs_jsonl(const std::filesystem::path& path) {
    auto in = open_input(path);
    return read_pairs_jsonl(in);
}

std::vector<AnnotationRecord> read_annotations_csv(std::istream& in) {
    auto header = csv::read_record(in);
    if (!header) return {};
    const auto c_pair = csv::column(*header, "pair_id");
    const auto c_annotator = csv::column(*header, "annotator_id");
    const auto c_rating = csv::column(*header, "rating");
    std::vector<AnnotationRecord> records;
    std::size_t row = 1;
    while (auto rec = csv::read_record(in)) {
        ++row;
        if (rec->size() == 1 && is_blank((*rec)[0])) continue;
        if (rec->size() < header->size()) throw ParseError("annotations row " + std::to_string(row) + ": too few fields");
        AnnotationRecord r;
        r.pair_id = (*rec)[c_pair];
        r.annotator_id = (*rec)[c_annotator];
        try {
            std::size_t used = 0;
            auto text = std::string(trim((*rec)[c_rating]));
            r.rating = std::stoi(text, &used);
            if (used != text.size()) throw std::invalid_argument(text);
        } catch (const std::exception&) {
            throw ParseError("annotations row " + std::to_string(row) + ": rating is not an integer");
        }
        if (r.rating < 1 || r.rating > 5)
            throw ValidationError("annotations row " + std::to_string(row) + ": rating outside 1..5");
        records.push_back(std::move(r));
    }
    return records;
}

std::vector<AnnotationRecord> read_annotations_csv(const std::filesystem::path& path) {
    auto in = open_input(path);
    return read_annotations_csv(in);
}

}  // namespace engage
