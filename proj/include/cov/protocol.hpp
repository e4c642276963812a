#pragma once

// Parsers for model output: THINK/ACTION/ANSWER steps, SELECT lines, and
// judge scores. Failures are returned as values so callers can drive the
// bounded retry policy.

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cov/errors.hpp"
#include "cov/geometry.hpp"

namespace cov {

enum class ParseErrorKind {
    Unparseable,
    UnknownVerb,
    IndexOutOfRange,
    EmptySelection,
    OutOfRange,
};

inline const char* parse_error_name(ParseErrorKind k) {
    switch (k) {
        case ParseErrorKind::Unparseable: return "unparseable";
        case ParseErrorKind::UnknownVerb: return "unknown_verb";
        case ParseErrorKind::IndexOutOfRange: return "index_out_of_range";
        case ParseErrorKind::EmptySelection: return "empty_selection";
        case ParseErrorKind::OutOfRange: return "out_of_range";
    }
    return "unparseable";
}

struct ParseFailure {
    ParseErrorKind kind = ParseErrorKind::Unparseable;
    std::string span;  // offending text, quoted back in retry prompts

    std::string message() const {
        return std::string(parse_error_name(kind)) + ": \"" + span + "\"";
    }
};

template <typename T>
struct Parsed {
    std::optional<T> value;
    std::optional<ParseFailure> failure;

    bool ok() const { return value.has_value(); }
    const T& operator*() const { return *value; }
    const T* operator->() const { return &*value; }

    static Parsed success(T v) { return {std::move(v), std::nullopt}; }
    static Parsed error(ParseErrorKind kind, std::string span) {
        return {std::nullopt, ParseFailure{kind, std::move(span)}};
    }
};

struct StepDecision {
    std::string thought;
    bool is_final = false;
    Action action;       // when !is_final
    std::string answer;  // when is_final

    static StepDecision act(Action a, std::string thought = {}) {
        StepDecision d;
        d.thought = std::move(thought);
        d.is_final = false;
        d.action = std::move(a);
        return d;
    }
    static StepDecision final(std::string text, std::string thought = {}) {
        StepDecision d;
        d.thought = std::move(thought);
        d.is_final = true;
        d.answer = std::move(text);
        d.action = Action::answer(d.answer);
        return d;
    }
};

struct SelectionDecision {
    std::vector<int> indices;
};

namespace detail {

inline std::string to_lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

inline std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

// drop leading markdown bullets/quotes/emphasis so "> **ACTION:** x" parses
inline std::string strip_line_decor(std::string s) {
    s = trim(s);
    size_t a = 0;
    while (a < s.size() && (s[a] == '#' || s[a] == '>' || s[a] == '-' ||
                            s[a] == '*' || s[a] == '`' ||
                            std::isspace(static_cast<unsigned char>(s[a]))))
        ++a;
    s = s.substr(a);
    while (!s.empty() && (s.back() == '*' || s.back() == '`'))
        s.pop_back();
    return trim(s);
}

inline std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::string cur;
    for (char c : text) {
        if (c == '\n') {
            lines.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    lines.push_back(cur);
    return lines;
}

// matches "<marker>:" at the head of a decorated line; returns the payload
inline std::optional<std::string> match_marker(const std::string& raw_line,
                                               const char* marker) {
    const std::string line = strip_line_decor(raw_line);
    const std::string lower = to_lower(line);
    const std::string want = to_lower(std::string(marker));
    if (lower.compare(0, want.size(), want) != 0) return std::nullopt;
    size_t pos = want.size();
    while (pos < line.size() && (line[pos] == '*' || line[pos] == '`')) ++pos;
    if (pos >= line.size() || line[pos] != ':') return std::nullopt;
    ++pos;
    std::string payload = line.substr(pos);
    // emphasis may wrap just the marker: "**ACTION:** move left"
    payload = trim(payload);
    while (!payload.empty() && (payload.front() == '*' || payload.front() == '`'))
        payload.erase(payload.begin());
    return trim(payload);
}

inline std::string squeeze_spaces(const std::string& s) {
    std::string out;
    bool prev_space = false;
    for (char c : s) {
        const bool space = std::isspace(static_cast<unsigned char>(c));
        if (space) {
            if (!prev_space && !out.empty()) out += ' ';
        } else {
            out += c;
        }
        prev_space = space;
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

inline std::string normalize_verb(const std::string& s) {
    std::string t = squeeze_spaces(to_lower(trim(s)));
    while (!t.empty() && (t.back() == '.' || t.back() == '!' || t.back() == ','))
        t.pop_back();
    return trim(t);
}

inline std::optional<int> trailing_int(const std::string& s) {
    size_t end = s.size();
    while (end > 0 && !std::isdigit(static_cast<unsigned char>(s[end - 1]))) --end;
    if (end == 0) return std::nullopt;
    size_t start = end;
    while (start > 0 && std::isdigit(static_cast<unsigned char>(s[start - 1])))
        --start;
    try {
        return std::stoi(s.substr(start, end - start));
    } catch (...) {
        return std::nullopt;
    }
}

}  // namespace detail

inline std::optional<ActionKind> motion_kind_from_canonical(const std::string& name) {
    static const std::map<std::string, ActionKind> table = {
        {"MoveForward", ActionKind::MoveForward},
        {"MoveBackward", ActionKind::MoveBackward},
        {"MoveLeft", ActionKind::MoveLeft},
        {"MoveRight", ActionKind::MoveRight},
        {"MoveUp", ActionKind::MoveUp},
        {"MoveDown", ActionKind::MoveDown},
        {"YawLeft", ActionKind::YawLeft},
        {"YawRight", ActionKind::YawRight},
        {"PitchUp", ActionKind::PitchUp},
        {"PitchDown", ActionKind::PitchDown},
        {"RollCW", ActionKind::RollCW},
        {"RollCCW", ActionKind::RollCCW},
    };
    auto it = table.find(name);
    if (it == table.end()) return std::nullopt;
    return it->second;
}

inline const char* canonical_kind_name(ActionKind k) {
    switch (k) {
        case ActionKind::MoveForward: return "MoveForward";
        case ActionKind::MoveBackward: return "MoveBackward";
        case ActionKind::MoveLeft: return "MoveLeft";
        case ActionKind::MoveRight: return "MoveRight";
        case ActionKind::MoveUp: return "MoveUp";
        case ActionKind::MoveDown: return "MoveDown";
        case ActionKind::YawLeft: return "YawLeft";
        case ActionKind::YawRight: return "YawRight";
        case ActionKind::PitchUp: return "PitchUp";
        case ActionKind::PitchDown: return "PitchDown";
        case ActionKind::RollCW: return "RollCW";
        case ActionKind::RollCCW: return "RollCCW";
        case ActionKind::SwitchTo: return "SwitchTo";
        case ActionKind::Answer: return "Answer";
    }
    return "?";
}

// Verb lexicon: canonical display names plus a data-driven synonym table
// (lines of `surface-form<TAB>CanonicalVerb`).
struct SynonymTable {
    std::map<std::string, ActionKind> verbs;       // normalized surface -> kind
    std::vector<std::string> switch_prefixes;      // normalized, longest first

    void add_verb(const std::string& surface, ActionKind kind) {
        verbs[detail::normalize_verb(surface)] = kind;
    }

    void add_switch_prefix(const std::string& surface) {
        const std::string n = detail::normalize_verb(surface);
        if (std::find(switch_prefixes.begin(), switch_prefixes.end(), n) ==
            switch_prefixes.end())
            switch_prefixes.push_back(n);
        std::sort(switch_prefixes.begin(), switch_prefixes.end(),
                  [](const std::string& a, const std::string& b) {
                      return a.size() > b.size();
                  });
    }

    static SynonymTable defaults() {
        SynonymTable t;
        for (ActionKind k : kMotionKinds) t.add_verb(action_name(k), k);
        t.add_verb("turn left", ActionKind::YawLeft);
        t.add_verb("turn right", ActionKind::YawRight);
        t.add_verb("rotate left", ActionKind::YawLeft);
        t.add_verb("rotate right", ActionKind::YawRight);
        t.add_verb("look up", ActionKind::PitchUp);
        t.add_verb("look down", ActionKind::PitchDown);
        t.add_verb("tilt up", ActionKind::PitchUp);
        t.add_verb("tilt down", ActionKind::PitchDown);
        t.add_verb("go forward", ActionKind::MoveForward);
        t.add_verb("go backward", ActionKind::MoveBackward);
        t.add_verb("go back", ActionKind::MoveBackward);
        t.add_verb("move back", ActionKind::MoveBackward);
        t.add_verb("move backwards", ActionKind::MoveBackward);
        t.add_verb("go left", ActionKind::MoveLeft);
        t.add_verb("go right", ActionKind::MoveRight);
        t.add_verb("strafe left", ActionKind::MoveLeft);
        t.add_verb("strafe right", ActionKind::MoveRight);
        t.add_verb("go up", ActionKind::MoveUp);
        t.add_verb("go down", ActionKind::MoveDown);
        t.add_verb("ascend", ActionKind::MoveUp);
        t.add_verb("descend", ActionKind::MoveDown);
        t.add_verb("roll clockwise", ActionKind::RollCW);
        t.add_verb("roll counterclockwise", ActionKind::RollCCW);
        t.add_verb("roll counter-clockwise", ActionKind::RollCCW);
        t.add_switch_prefix("switch to view");
        t.add_switch_prefix("switch to");
        t.add_switch_prefix("go to view");
        t.add_switch_prefix("jump to view");
        t.add_switch_prefix("view");
        return t;
    }

    // Extends the defaults with TSV rows. The special canonical name
    // "SwitchTo" registers a switch prefix.
    static SynonymTable from_tsv(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open synonym table: " + path);
        SynonymTable t = defaults();
        std::string line;
        size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty() || line[0] == '#') continue;
            const auto tab = line.find('\t');
            if (tab == std::string::npos)
                throw MalformedFileError("synonym line " + std::to_string(line_no) +
                                         " lacks a tab: " + path);
            const std::string surface = detail::trim(line.substr(0, tab));
            const std::string canonical = detail::trim(line.substr(tab + 1));
            if (canonical == "SwitchTo") {
                t.add_switch_prefix(surface);
                continue;
            }
            const auto kind = motion_kind_from_canonical(canonical);
            if (!kind)
                throw MalformedFileError("unknown canonical verb '" + canonical +
                                         "' at line " + std::to_string(line_no) +
                                         ": " + path);
            t.add_verb(surface, *kind);
        }
        return t;
    }

    std::string to_tsv() const {
        std::ostringstream out;
        for (const auto& [surface, kind] : verbs)
            out << surface << "\t" << canonical_kind_name(kind) << "\n";
        for (const auto& prefix : switch_prefixes)
            out << prefix << "\tSwitchTo\n";
        return out.str();
    }
};

inline const SynonymTable& default_synonyms() {
    static const SynonymTable table = SynonymTable::defaults();
    return table;
}

// Resolves an ACTION payload into an Action. SwitchTo indices are 0-based
// and validated against anchor_count.
inline Parsed<Action> parse_action_verb(const std::string& payload, int anchor_count,
                                        const SynonymTable& table) {
    const std::string verb = detail::normalize_verb(payload);
    if (verb.empty())
        return Parsed<Action>::error(ParseErrorKind::UnknownVerb, payload);

    for (const auto& prefix : table.switch_prefixes) {
        if (verb.compare(0, prefix.size(), prefix) == 0 &&
            (verb.size() == prefix.size() || verb[prefix.size()] == ' ')) {
            const auto idx = detail::trailing_int(verb);
            if (!idx)
                return Parsed<Action>::error(ParseErrorKind::UnknownVerb, payload);
            if (*idx < 0 || *idx >= anchor_count)
                return Parsed<Action>::error(ParseErrorKind::IndexOutOfRange,
                                             std::to_string(*idx));
            return Parsed<Action>::success(Action::switch_to(*idx));
        }
    }

    auto it = table.verbs.find(verb);
    if (it == table.verbs.end())
        return Parsed<Action>::error(ParseErrorKind::UnknownVerb, payload);
    return Parsed<Action>::success(Action::motion(it->second));
}

// Grammar: optional THINK line(s), then exactly one ACTION or ANSWER line.
inline Parsed<StepDecision> parse_step(const std::string& text, int anchor_count,
                                       const SynonymTable& table = default_synonyms()) {
    std::string thought;
    for (const auto& raw : detail::split_lines(text)) {
        if (auto t = detail::match_marker(raw, "THINK")) {
            if (!thought.empty()) thought += "\n";
            thought += *t;
            continue;
        }
        if (auto payload = detail::match_marker(raw, "ACTION")) {
            auto parsed = parse_action_verb(*payload, anchor_count, table);
            if (!parsed.ok()) return {std::nullopt, parsed.failure};
            return Parsed<StepDecision>::success(
                StepDecision::act(*parsed.value, thought));
        }
        if (auto payload = detail::match_marker(raw, "ANSWER")) {
            return Parsed<StepDecision>::success(
                StepDecision::final(*payload, thought));
        }
    }
    return Parsed<StepDecision>::error(ParseErrorKind::Unparseable,
                                       text.substr(0, 80));
}

namespace detail {

inline std::vector<int> scan_integers(const std::string& s) {
    std::vector<int> out;
    size_t i = 0;
    while (i < s.size()) {
        if (std::isdigit(static_cast<unsigned char>(s[i]))) {
            size_t j = i;
            while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
            // reject digits glued to letters ("room12a")
            const bool left_ok =
                i == 0 || !std::isalpha(static_cast<unsigned char>(s[i - 1]));
            const bool right_ok =
                j == s.size() || !std::isalpha(static_cast<unsigned char>(s[j]));
            // a minus touching the first digit is a sign, not a list bullet
            const bool negative = i > 0 && s[i - 1] == '-';
            if (left_ok && right_ok) {
                try {
                    const int v = std::stoi(s.substr(i, j - i));
                    out.push_back(negative ? -v : v);
                } catch (...) {
                    // overflow: skip the run
                }
            }
            i = j;
        } else {
            ++i;
        }
    }
    return out;
}

inline std::vector<int> dedup_keep_order(const std::vector<int>& in) {
    std::vector<int> out;
    for (int v : in)
        if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
    return out;
}

}  // namespace detail

// Extracts the first SELECT: line. Lenient mode additionally falls back to
// scanning the whole text for in-range integers when no SELECT line exists.
inline Parsed<SelectionDecision> parse_selection(const std::string& text,
                                                 int frame_count, int k_max,
                                                 bool lenient = false) {
    for (const auto& raw : detail::split_lines(text)) {
        auto payload = detail::match_marker(raw, "SELECT");
        if (!payload) continue;
        auto indices = detail::dedup_keep_order(detail::scan_integers(*payload));
        if (indices.empty())
            return Parsed<SelectionDecision>::error(ParseErrorKind::EmptySelection,
                                                    raw);
        for (int idx : indices)
            if (idx < 0 || idx >= frame_count)
                return Parsed<SelectionDecision>::error(
                    ParseErrorKind::IndexOutOfRange, std::to_string(idx));
        if (static_cast<int>(indices.size()) > k_max) indices.resize(k_max);
        return Parsed<SelectionDecision>::success(SelectionDecision{indices});
    }
    if (lenient) {
        std::vector<int> hits;
        for (int v : detail::scan_integers(text))
            if (v >= 0 && v < frame_count) hits.push_back(v);
        hits = detail::dedup_keep_order(hits);
        if (!hits.empty()) {
            if (static_cast<int>(hits.size()) > k_max) hits.resize(k_max);
            return Parsed<SelectionDecision>::success(SelectionDecision{hits});
        }
        return Parsed<SelectionDecision>::error(ParseErrorKind::EmptySelection,
                                                text.substr(0, 80));
    }
    return Parsed<SelectionDecision>::error(ParseErrorKind::Unparseable,
                                            text.substr(0, 80));
}

// First standalone integer; must land in [1,5].
inline Parsed<int> parse_judge_score(const std::string& text) {
    const auto ints = detail::scan_integers(text);
    if (ints.empty())
        return Parsed<int>::error(ParseErrorKind::Unparseable, text.substr(0, 80));
    const int v = ints.front();
    if (v < 1 || v > 5)
        return Parsed<int>::error(ParseErrorKind::OutOfRange, std::to_string(v));
    return Parsed<int>::success(v);
}

}  // namespace cov
