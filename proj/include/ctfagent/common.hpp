#pragma once

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace ctfagent {

using json = nlohmann::json;
namespace fs = std::filesystem;

// Difficulty levels used by routing and the self-assessment contract.
enum class Level { L1 = 1, L2, L3, L4, L5 };

enum class Tier { MID, TOP };

inline const char* to_string(Level l) {
    switch (l) {
        case Level::L1: return "L1";
        case Level::L2: return "L2";
        case Level::L3: return "L3";
        case Level::L4: return "L4";
        case Level::L5: return "L5";
    }
    return "L2";
}

inline const char* to_string(Tier t) { return t == Tier::MID ? "MID" : "TOP"; }

inline std::optional<Level> parse_level(std::string_view s) {
    if (s == "L1") return Level::L1;
    if (s == "L2") return Level::L2;
    if (s == "L3") return Level::L3;
    if (s == "L4") return Level::L4;
    if (s == "L5") return Level::L5;
    return std::nullopt;
}

inline std::optional<Tier> parse_tier(std::string_view s) {
    if (s == "MID") return Tier::MID;
    if (s == "TOP") return Tier::TOP;
    return std::nullopt;
}

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct StorageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::string lowercase(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

inline bool contains_ci(std::string_view haystack, std::string_view needle) {
    if (needle.empty()) return true;
    auto it = std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end(),
                          [](char a, char b) {
                              return std::tolower(static_cast<unsigned char>(a)) ==
                                     std::tolower(static_cast<unsigned char>(b));
                          });
    return it != haystack.end();
}

// Whitespace-delimited word count; the token approximation used by the mock
// backend and for context-limit estimates.
inline std::int64_t word_count(std::string_view text) {
    std::int64_t n = 0;
    bool in_word = false;
    for (char c : text) {
        bool ws = std::isspace(static_cast<unsigned char>(c)) != 0;
        if (!ws && !in_word) ++n;
        in_word = !ws;
    }
    return n;
}

inline std::vector<std::string> split_ws(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

inline std::int64_t unix_millis() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

inline std::string read_text_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw StorageError("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text_file(const fs::path& p, std::string_view content) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw StorageError("cannot write " + p.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw StorageError("short write to " + p.string());
}

// Write-to-temp then rename; readers never observe a partial file.
inline void atomic_write_file(const fs::path& p, std::string_view content) {
    fs::path tmp = p;
    tmp += ".tmp";
    write_text_file(tmp, content);
    fs::rename(tmp, p);
}

// First `n` sentences of `text` (period/question/exclamation terminated).
// Used for offline extractive summaries and research notes.
inline std::string first_sentences(std::string_view text, std::size_t n) {
    std::string out;
    std::size_t count = 0;
    for (std::size_t i = 0; i < text.size(); ++i) {
        out.push_back(text[i]);
        char c = text[i];
        if (c == '.' || c == '?' || c == '!') {
            bool end = i + 1 >= text.size() ||
                       std::isspace(static_cast<unsigned char>(text[i + 1]));
            if (end && ++count >= n) break;
        }
    }
    // trim leading/trailing whitespace
    auto b = out.find_first_not_of(" \t\r\n");
    auto e = out.find_last_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    return out.substr(b, e - b + 1);
}

}  // namespace ctfagent
