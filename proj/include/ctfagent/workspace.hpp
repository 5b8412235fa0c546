#pragma once

#include <openssl/evp.h>

#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "common.hpp"

namespace ctfagent {

inline std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    EVP_DigestUpdate(ctx, bytes.data(), bytes.size());
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

// Content-derived identifier: 16 hex chars of the SHA-256 of the raw bytes.
inline std::string compute_doc_id(std::string_view raw_bytes) {
    return sha256_hex(raw_bytes).substr(0, 16);
}

enum class Representation { RAW, TEXT, MARKDOWN, SUMMARY };

struct DocMetadata {
    std::string title;
    std::string source_channel;
    std::int64_t ingested_at_ms = 0;
    std::int64_t byte_size = 0;
};

struct DocRecord {
    std::string doc_id;
    std::string origin;
    std::map<std::string, std::string> representations;  // rep name -> relative file path
    DocMetadata metadata;
    bool paper_like = false;

    json to_json() const {
        return {{"doc_id", doc_id},
                {"origin", origin},
                {"representations", representations},
                {"metadata",
                 {{"title", metadata.title},
                  {"source_channel", metadata.source_channel},
                  {"ingested_at_ms", metadata.ingested_at_ms},
                  {"byte_size", metadata.byte_size}}},
                {"paper_like", paper_like}};
    }

    static DocRecord from_json(const json& j) {
        DocRecord r;
        r.doc_id = j.at("doc_id").get<std::string>();
        r.origin = j.at("origin").get<std::string>();
        r.representations =
            j.at("representations").get<std::map<std::string, std::string>>();
        const auto& m = j.at("metadata");
        r.metadata = {m.at("title").get<std::string>(),
                      m.at("source_channel").get<std::string>(),
                      m.at("ingested_at_ms").get<std::int64_t>(),
                      m.at("byte_size").get<std::int64_t>()};
        r.paper_like = j.value("paper_like", false);
        return r;
    }
};

// Persistent doc_id-indexed store. Layout:
//   <root>/docs/<doc_id>/{raw.bin, text.txt, doc.md, summary.md}
//   <root>/index.json   (atomic temp-then-rename commits)
// Mutations are serialized per workspace root (in-process mutex plus an
// advisory lock file on disk).
class Workspace {
public:
    static constexpr int kFormatVersion = 1;

    explicit Workspace(fs::path root) : root_(std::move(root)) {
        fs::create_directories(root_ / "docs");
        lock_path_ = root_ / ".lock";
        if (!fs::exists(lock_path_)) write_text_file(lock_path_, "");
        load_index();
    }

    // Test hook: invoked after representation files are written but before
    // the index commit; throwing from it simulates a crash at that point.
    std::function<void()> pre_commit_hook;

    // Idempotent content-addressed ingest.
    std::string ingest(std::string_view raw_bytes, const std::string& origin,
                       DocMetadata metadata, bool paper_like = false,
                       std::optional<std::string> markdown = std::nullopt) {
        if (raw_bytes.empty()) throw StorageError("ingest: raw bytes must be non-empty");
        std::lock_guard lock(mu_);
        std::string id = compute_doc_id(raw_bytes);
        if (index_.count(id)) return id;  // already present, nothing rewritten

        fs::path dir = root_ / "docs" / id;
        fs::create_directories(dir);
        write_text_file(dir / "raw.bin", raw_bytes);
        // TEXT derivation: raw is stored verbatim when it is already text;
        // binary payloads would go through the snapshot converters upstream.
        write_text_file(dir / "text.txt", raw_bytes);
        DocRecord rec;
        rec.doc_id = id;
        rec.origin = origin;
        rec.representations["RAW"] = "docs/" + id + "/raw.bin";
        rec.representations["TEXT"] = "docs/" + id + "/text.txt";
        if (markdown) {
            write_text_file(dir / "doc.md", *markdown);
            rec.representations["MARKDOWN"] = "docs/" + id + "/doc.md";
        }
        metadata.ingested_at_ms = unix_millis();
        metadata.byte_size = static_cast<std::int64_t>(raw_bytes.size());
        rec.metadata = std::move(metadata);
        rec.paper_like = paper_like;

        if (pre_commit_hook) pre_commit_hook();

        index_[id] = std::move(rec);
        ++version_;
        commit_index();
        return id;
    }

    // SUMMARY written and indexed; the caller supplies the summarizer (a
    // model call live, an extractive function offline).
    std::string summarize(const std::string& doc_id,
                          const std::function<std::string(const std::string&)>& summarizer) {
        std::lock_guard lock(mu_);
        auto it = index_.find(doc_id);
        if (it == index_.end()) throw StorageError("unknown doc_id: " + doc_id);
        std::string text = read_text_file(root_ / it->second.representations.at("TEXT"));
        std::string summary = summarizer(text);
        fs::path p = root_ / "docs" / doc_id / "summary.md";
        write_text_file(p, summary);
        it->second.representations["SUMMARY"] = "docs/" + doc_id + "/summary.md";
        ++version_;
        commit_index();
        return summary;
    }

    std::string summarize_offline(const std::string& doc_id) {
        return summarize(doc_id, [](const std::string& text) {
            std::string s = first_sentences(text, 3);
            return s.empty() ? text.substr(0, 200) : s;
        });
    }

    std::optional<DocRecord> lookup(const std::string& doc_id) const {
        std::lock_guard lock(mu_);
        auto it = index_.find(doc_id);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    std::vector<DocRecord> list() const {
        std::lock_guard lock(mu_);
        std::vector<DocRecord> out;
        for (const auto& [_, rec] : index_) out.push_back(rec);
        return out;
    }

    // Metadata-only filter; no content scan.
    std::vector<DocRecord> find(const std::function<bool(const DocRecord&)>& pred) const {
        std::lock_guard lock(mu_);
        std::vector<DocRecord> out;
        for (const auto& [_, rec] : index_)
            if (pred(rec)) out.push_back(rec);
        return out;
    }

    std::string read_representation(const std::string& doc_id, const std::string& rep) const {
        std::lock_guard lock(mu_);
        auto it = index_.find(doc_id);
        if (it == index_.end()) throw StorageError("unknown doc_id: " + doc_id);
        auto rit = it->second.representations.find(rep);
        if (rit == it->second.representations.end())
            throw StorageError("representation " + rep + " missing for " + doc_id);
        return read_text_file(root_ / rit->second);
    }

    std::size_t size() const {
        std::lock_guard lock(mu_);
        return index_.size();
    }

    std::int64_t version() const {
        std::lock_guard lock(mu_);
        return version_;
    }

    const fs::path& root() const { return root_; }

    // Every indexed doc_id must resolve to existing RAW and TEXT files.
    std::vector<std::string> fsck() const {
        std::lock_guard lock(mu_);
        std::vector<std::string> problems;
        for (const auto& [id, rec] : index_) {
            for (const char* rep : {"RAW", "TEXT"}) {
                auto it = rec.representations.find(rep);
                if (it == rec.representations.end()) {
                    problems.push_back(id + ": missing " + rep + " entry");
                } else if (!fs::is_regular_file(root_ / it->second)) {
                    problems.push_back(id + ": dangling " + rep + " file " + it->second);
                }
            }
        }
        return problems;
    }

    // One-paragraph inventory for the system prompt.
    std::string summary_line() const {
        std::lock_guard lock(mu_);
        if (index_.empty()) return "";
        std::string out = "Persistent workspace holds " + std::to_string(index_.size()) +
                          " document(s):\n";
        for (const auto& [id, rec] : index_)
            out += "- " + id + ": " + rec.metadata.title + "\n";
        return out;
    }

private:
    void load_index() {
        fs::path p = root_ / "index.json";
        if (!fs::exists(p)) return;
        json j = json::parse(read_text_file(p));
        version_ = j.value("version", std::int64_t{0});
        for (const auto& e : j.value("entries", json::array()))
            index_[e.at("doc_id").get<std::string>()] = DocRecord::from_json(e);
    }

    void commit_index() {
        json entries = json::array();
        for (const auto& [_, rec] : index_) entries.push_back(rec.to_json());
        json j{{"format_version", kFormatVersion},
               {"version", version_},
               {"entries", std::move(entries)}};
        atomic_write_file(root_ / "index.json", j.dump(2));
    }

    fs::path root_;
    fs::path lock_path_;
    mutable std::mutex mu_;
    std::map<std::string, DocRecord> index_;
    std::int64_t version_ = 0;
};

}  // namespace ctfagent
