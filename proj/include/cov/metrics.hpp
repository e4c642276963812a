#pragma once

// Answer scoring: LLM-Match aggregation, EM@1, BLEU-4, ROUGE-L, CIDEr, and
// the per-run score report.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cov/chat.hpp"
#include "cov/errors.hpp"
#include "cov/gateway.hpp"
#include "cov/prompts.hpp"
#include "cov/protocol.hpp"

namespace cov {

// lowercase, strip ASCII punctuation, collapse whitespace, drop leading
// articles (a/an/the) repeatedly
inline std::string normalize_answer(const std::string& s) {
    std::string lowered;
    lowered.reserve(s.size());
    for (char c : s) {
        const auto u = static_cast<unsigned char>(c);
        if (std::ispunct(u)) continue;
        lowered += static_cast<char>(std::tolower(u));
    }
    std::istringstream in(lowered);
    std::vector<std::string> words;
    std::string w;
    while (in >> w) words.push_back(w);
    size_t start = 0;
    while (start < words.size() &&
           (words[start] == "a" || words[start] == "an" || words[start] == "the"))
        ++start;
    std::string out;
    for (size_t i = start; i < words.size(); ++i) {
        if (!out.empty()) out += ' ';
        out += words[i];
    }
    return out;
}

inline int em_at_1(const std::string& prediction, const std::string& ground_truth,
                   const std::vector<std::string>& extras = {}) {
    const std::string p = normalize_answer(prediction);
    if (p == normalize_answer(ground_truth)) return 1;
    for (const auto& e : extras)
        if (p == normalize_answer(e)) return 1;
    return 0;
}

// lowercase, strip punctuation, split on whitespace (articles kept)
inline std::vector<std::string> tokenize(const std::string& s) {
    std::string cleaned;
    cleaned.reserve(s.size());
    for (char c : s) {
        const auto u = static_cast<unsigned char>(c);
        if (std::ispunct(u)) continue;
        cleaned += static_cast<char>(std::tolower(u));
    }
    std::istringstream in(cleaned);
    std::vector<std::string> tokens;
    std::string w;
    while (in >> w) tokens.push_back(w);
    return tokens;
}

namespace detail {

inline std::map<std::string, int> ngram_counts(const std::vector<std::string>& tokens,
                                               int n) {
    std::map<std::string, int> counts;
    if (static_cast<int>(tokens.size()) < n) return counts;
    for (size_t i = 0; i + n <= tokens.size(); ++i) {
        std::string key;
        for (int k = 0; k < n; ++k) {
            if (k) key += '\x1f';
            key += tokens[i + k];
        }
        ++counts[key];
    }
    return counts;
}

inline size_t lcs_length(const std::vector<std::string>& a,
                         const std::vector<std::string>& b) {
    const size_t n = a.size(), m = b.size();
    std::vector<size_t> prev(m + 1, 0), cur(m + 1, 0);
    for (size_t i = 1; i <= n; ++i) {
        for (size_t j = 1; j <= m; ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1
                                          : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

}  // namespace detail

// Sentence BLEU, uniform weights over 1..4-grams, clipped counts, brevity
// penalty against the closest reference length (ties go to the shorter), and
// +1 smoothing when a higher-order n has zero matches.
inline double bleu4(const std::string& prediction,
                    const std::vector<std::string>& references) {
    const auto pred = tokenize(prediction);
    if (pred.empty()) return 0.0;

    std::vector<std::vector<std::string>> refs;
    for (const auto& r : references) refs.push_back(tokenize(r));
    if (refs.empty()) return 0.0;

    double log_sum = 0.0;
    for (int n = 1; n <= 4; ++n) {
        const auto pred_counts = detail::ngram_counts(pred, n);
        long total = 0, matched = 0;
        for (const auto& [gram, count] : pred_counts) {
            total += count;
            int best_ref = 0;
            for (const auto& ref : refs) {
                const auto rc = detail::ngram_counts(ref, n);
                auto it = rc.find(gram);
                if (it != rc.end()) best_ref = std::max(best_ref, it->second);
            }
            matched += std::min<long>(count, best_ref);
        }
        double p;
        if (matched > 0) {
            p = static_cast<double>(matched) / static_cast<double>(total);
        } else if (n >= 2) {
            p = 1.0 / static_cast<double>(total + 1);
        } else {
            return 0.0;  // no unigram overlap at all
        }
        log_sum += 0.25 * std::log(p);
    }

    const long c = static_cast<long>(pred.size());
    long r = static_cast<long>(refs[0].size());
    for (const auto& ref : refs) {
        const long len = static_cast<long>(ref.size());
        const long cur = std::labs(len - c), best = std::labs(r - c);
        if (cur < best || (cur == best && len < r)) r = len;
    }
    const double bp = c >= r ? 1.0 : std::exp(1.0 - static_cast<double>(r) / c);
    return bp * std::exp(log_sum);
}

// LCS F-measure with beta = 1.2, max over references.
inline double rouge_l(const std::string& prediction,
                      const std::vector<std::string>& references) {
    const auto pred = tokenize(prediction);
    if (pred.empty()) return 0.0;
    constexpr double beta = 1.2;
    double best = 0.0;
    for (const auto& r : references) {
        const auto ref = tokenize(r);
        if (ref.empty()) continue;
        const double lcs = static_cast<double>(detail::lcs_length(pred, ref));
        if (lcs == 0.0) continue;
        const double prec = lcs / static_cast<double>(pred.size());
        const double rec = lcs / static_cast<double>(ref.size());
        const double denom = rec + beta * beta * prec;
        if (denom > 0)
            best = std::max(best, (1.0 + beta * beta) * prec * rec / denom);
    }
    return best;
}

struct CiderItem {
    std::string prediction;
    std::vector<std::string> references;
};

struct CiderResult {
    std::vector<double> per_item;
    double mean = 0.0;
    bool uniform_idf = false;  // corpus had < 2 items
};

// Consensus metric: one TF-IDF vector over all 1..4-grams per text, cosine
// against each reference, averaged, scaled by 10. IDF is document frequency
// over the corpus's reference sets.
inline CiderResult cider(const std::vector<CiderItem>& items) {
    CiderResult result;
    if (items.empty()) return result;

    const size_t n_items = items.size();
    result.uniform_idf = n_items < 2;

    auto combined_counts = [](const std::vector<std::string>& tokens) {
        std::map<std::string, double> vec;
        for (int n = 1; n <= 4; ++n) {
            for (const auto& [gram, count] : detail::ngram_counts(tokens, n))
                vec[std::to_string(n) + '\x1e' + gram] += count;
        }
        return vec;
    };

    std::map<std::string, int> df;
    std::vector<std::vector<std::map<std::string, double>>> ref_vecs(n_items);
    for (size_t i = 0; i < n_items; ++i) {
        std::map<std::string, bool> seen;
        for (const auto& r : items[i].references) {
            auto vec = combined_counts(tokenize(r));
            for (const auto& [gram, _] : vec) seen[gram] = true;
            ref_vecs[i].push_back(std::move(vec));
        }
        for (const auto& [gram, _] : seen) ++df[gram];
    }

    auto idf = [&](const std::string& gram) {
        if (result.uniform_idf) return 1.0;
        auto it = df.find(gram);
        const int d = it == df.end() ? 0 : it->second;
        return std::log(static_cast<double>(n_items) /
                        static_cast<double>(std::max(1, d)));
    };

    auto weighted = [&](const std::map<std::string, double>& counts) {
        std::map<std::string, double> w;
        for (const auto& [gram, tf] : counts) {
            const double v = tf * idf(gram);
            if (v != 0.0) w[gram] = v;
        }
        return w;
    };

    auto cosine = [](const std::map<std::string, double>& a,
                     const std::map<std::string, double>& b) {
        double dot = 0, na = 0, nb = 0;
        for (const auto& [g, v] : a) {
            na += v * v;
            auto it = b.find(g);
            if (it != b.end()) dot += v * it->second;
        }
        for (const auto& [g, v] : b) nb += v * v;
        if (na == 0 || nb == 0) return 0.0;
        return dot / (std::sqrt(na) * std::sqrt(nb));
    };

    double sum = 0.0;
    for (size_t i = 0; i < n_items; ++i) {
        const auto pred_vec = weighted(combined_counts(tokenize(items[i].prediction)));
        double item_score = 0.0;
        if (!ref_vecs[i].empty()) {
            for (const auto& rv : ref_vecs[i]) item_score += cosine(pred_vec, weighted(rv));
            item_score /= static_cast<double>(ref_vecs[i].size());
        }
        item_score *= 10.0;
        result.per_item.push_back(item_score);
        sum += item_score;
    }
    result.mean = sum / static_cast<double>(n_items);
    return result;
}

// (1/N) * sum((gamma - 1) / 4) * 100
inline double llm_match(const std::vector<int>& gammas) {
    if (gammas.empty()) throw EmptyInputError("llm_match over an empty list");
    double sum = 0.0;
    for (int g : gammas) {
        if (g < 1 || g > 5)
            throw OutOfRangeError("judge score " + std::to_string(g) +
                                  " outside 1..5");
        sum += (g - 1) / 4.0;
    }
    return sum / static_cast<double>(gammas.size()) * 100.0;
}

struct JudgeOutcome {
    int gamma = 1;
    bool failed = false;  // parse failed even after the retry
    std::string raw_reply;
};

// One retry on an unparseable score; after that gamma = 1 with the failure
// flag set.
inline JudgeOutcome judge(const std::string& question, const std::string& ground_truth,
                          const std::vector<std::string>& extras,
                          const std::string& prediction, Backend& backend,
                          const PromptLibrary& lib = default_prompts()) {
    auto messages = render_judge_prompt(question, ground_truth, extras, prediction, lib);
    JudgeOutcome out;
    for (int attempt = 0; attempt < 2; ++attempt) {
        out.raw_reply = backend.complete(messages);
        const auto score = parse_judge_score(out.raw_reply);
        if (score.ok()) {
            out.gamma = *score;
            out.failed = false;
            return out;
        }
        messages.push_back(ChatMessage::assistant(out.raw_reply));
        messages.push_back(
            ChatMessage::user("Reply with a single integer from 1 to 5 only."));
    }
    out.gamma = 1;
    out.failed = true;
    return out;
}

// Deterministic offline judge: 5 when the normalized prediction matches the
// ground truth or an extra, otherwise 1.
class RuleJudgeBackend : public Backend {
public:
    RuleJudgeBackend(std::string ground_truth, std::vector<std::string> extras)
        : ground_truth_(std::move(ground_truth)), extras_(std::move(extras)) {}

protected:
    std::string complete_impl(const std::vector<ChatMessage>& messages) override {
        const std::string text = latest_user_text(messages);
        const std::string marker = "Predicted answer: ";
        const auto pos = text.find(marker);
        std::string prediction =
            pos == std::string::npos ? "" : text.substr(pos + marker.size());
        const auto nl = prediction.find('\n');
        if (nl != std::string::npos) prediction = prediction.substr(0, nl);
        if (prediction == "(no answer)") prediction.clear();
        return em_at_1(prediction, ground_truth_, extras_) ? "5" : "1";
    }

private:
    std::string ground_truth_;
    std::vector<std::string> extras_;
};

struct QuestionScore {
    std::string episode_id;
    std::optional<int> gamma;
    bool judge_failed = false;
    int em = 0;
    double bleu4 = 0.0;
    double rouge_l = 0.0;
    double cider = 0.0;
    std::string prediction;
};

struct ScoreReport {
    std::vector<QuestionScore> per_question;
    std::optional<double> llm_match_pct;
    double em_pct = 0.0;
    double bleu4 = 0.0;
    double rouge_l = 0.0;
    double cider = 0.0;
    bool cider_uniform_idf = false;
    int n = 0;

    // aggregates are always derived from the rows
    void recompute_aggregates() {
        n = static_cast<int>(per_question.size());
        if (n == 0) {
            llm_match_pct.reset();
            em_pct = bleu4 = rouge_l = cider = 0.0;
            return;
        }
        std::vector<int> gammas;
        double em_sum = 0, bleu_sum = 0, rouge_sum = 0, cider_sum = 0;
        for (const auto& q : per_question) {
            if (q.gamma) gammas.push_back(*q.gamma);
            em_sum += q.em;
            bleu_sum += q.bleu4;
            rouge_sum += q.rouge_l;
            cider_sum += q.cider;
        }
        llm_match_pct = gammas.empty() ? std::optional<double>{}
                                       : std::optional<double>{llm_match(gammas)};
        em_pct = em_sum / n * 100.0;
        bleu4 = bleu_sum / n;
        rouge_l = rouge_sum / n;
        cider = cider_sum / n;
    }

    nlohmann::json to_json() const {
        nlohmann::json rows = nlohmann::json::array();
        for (const auto& q : per_question) {
            nlohmann::json row;
            row["episode_id"] = q.episode_id;
            if (q.gamma) row["gamma"] = *q.gamma;
            row["judge_failed"] = q.judge_failed;
            row["em"] = q.em;
            row["bleu4"] = q.bleu4;
            row["rouge_l"] = q.rouge_l;
            row["cider"] = q.cider;
            row["prediction"] = q.prediction;
            rows.push_back(std::move(row));
        }
        nlohmann::json agg;
        if (llm_match_pct) agg["llm_match_pct"] = *llm_match_pct;
        agg["em_pct"] = em_pct;
        agg["bleu4"] = bleu4;
        agg["rouge_l"] = rouge_l;
        agg["cider"] = cider;
        agg["meteor"] = nullptr;  // column reserved, metric not computed
        nlohmann::json j;
        j["per_question"] = std::move(rows);
        j["aggregate"] = std::move(agg);
        j["n"] = n;
        j["cider_uniform_idf"] = cider_uniform_idf;
        return j;
    }

    std::string to_table() const {
        std::ostringstream out;
        out << std::left << std::setw(24) << "episode" << std::right << std::setw(7)
            << "gamma" << std::setw(5) << "em" << std::setw(9) << "bleu4"
            << std::setw(9) << "rougeL" << std::setw(9) << "cider" << "\n";
        out << std::string(63, '-') << "\n";
        out << std::fixed << std::setprecision(3);
        for (const auto& q : per_question) {
            out << std::left << std::setw(24) << q.episode_id.substr(0, 23)
                << std::right << std::setw(7)
                << (q.gamma ? std::to_string(*q.gamma) : std::string("-"))
                << std::setw(5) << q.em << std::setw(9) << q.bleu4 << std::setw(9)
                << q.rouge_l << std::setw(9) << q.cider << "\n";
        }
        out << std::string(63, '-') << "\n";
        out << std::left << std::setw(24) << ("aggregate (n=" + std::to_string(n) + ")")
            << std::right << std::setw(7);
        if (llm_match_pct)
            out << std::setprecision(2) << *llm_match_pct << std::setprecision(3);
        else
            out << "-";
        out << std::setw(5) << std::setprecision(0) << em_pct << std::setprecision(3)
            << std::setw(9) << bleu4 << std::setw(9) << rouge_l << std::setw(9)
            << cider << "\n";
        return out.str();
    }
};

}  // namespace cov
