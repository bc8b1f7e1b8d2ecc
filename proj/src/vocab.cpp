#include "hiersum/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "hiersum/errors.hpp"

namespace hiersum {

std::vector<std::string> split_whitespace(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

void Vocabulary::add(const std::string& token) {
  token_to_id_.emplace(token, static_cast<int>(id_to_token_.size()));
  id_to_token_.push_back(token);
}

Vocabulary Vocabulary::build(std::span<const std::string> texts, int min_freq) {
  if (texts.empty()) throw ValidationError("build_vocab: empty corpus");

  std::map<std::string, int64_t> freq;  // ordered map fixes the tie-break order
  for (const std::string& text : texts) {
    for (const std::string& tok : split_whitespace(text)) ++freq[tok];
  }

  Vocabulary v;
  v.add(kPadToken);
  v.add(kSodToken);
  v.add(kEosToken);
  v.add(kUnkToken);

  std::vector<std::pair<std::string, int64_t>> kept;
  for (const auto& [tok, n] : freq) {
    if (n < min_freq) continue;
    if (v.token_to_id_.count(tok)) continue;  // literal reserved spellings stay reserved
    kept.emplace_back(tok, n);
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  for (const auto& [tok, n] : kept) v.add(tok);
  return v;
}

int Vocabulary::id_of(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token_of(int id) const {
  if (id < 0 || id >= size()) {
    throw ValidationError("token_of: id " + std::to_string(id) + " outside vocabulary of size " +
                          std::to_string(size()));
  }
  return id_to_token_[id];
}

std::vector<int> Vocabulary::encode(const std::string& text) const {
  std::vector<int> ids;
  for (const std::string& tok : split_whitespace(text)) ids.push_back(id_of(tok));
  return ids;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (!out.empty()) out += ' ';
    out += token_of(id);
  }
  return out;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write vocabulary file: " + path);
  for (int id = 0; id < size(); ++id) {
    out << id_to_token_[id] << '\t' << id << '\n';
  }
  if (!out) throw IoError("failed while writing vocabulary file: " + path);
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary file: " + path);
  Vocabulary v;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ValidationError("vocabulary file " + path + " line " + std::to_string(lineno) +
                            ": expected token<TAB>id");
    }
    const std::string tok = line.substr(0, tab);
    int id = 0;
    try {
      id = std::stoi(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw ValidationError("vocabulary file " + path + " line " + std::to_string(lineno) +
                            ": bad id field");
    }
    if (id != static_cast<int>(v.id_to_token_.size()) || v.token_to_id_.count(tok)) {
      throw ValidationError("vocabulary file " + path + " line " + std::to_string(lineno) +
                            ": ids must be unique and consecutive from 0");
    }
    v.add(tok);
  }
  if (v.size() < 4 || v.id_to_token_[kPadId] != kPadToken || v.id_to_token_[kSodId] != kSodToken ||
      v.id_to_token_[kEosId] != kEosToken || v.id_to_token_[kUnkId] != kUnkToken) {
    throw ValidationError("vocabulary file " + path + ": reserved tokens missing or misplaced");
  }
  return v;
}

}  // namespace hiersum
