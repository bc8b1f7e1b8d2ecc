#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace hiersum {

inline constexpr int kPadId = 0;
inline constexpr int kSodId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;

inline constexpr const char* kPadToken = "<pad>";
inline constexpr const char* kSodToken = "<s>";
inline constexpr const char* kEosToken = "</s>";
inline constexpr const char* kUnkToken = "<unk>";

/// Whitespace-token vocabulary with four reserved entries at fixed ids.
/// Immutable once built; safe to share across threads.
class Vocabulary {
 public:
  /// Counts whitespace tokens over texts, keeps those seen at least
  /// min_freq times, and ids them by descending frequency with
  /// lexicographic tie-break after the reserved block.
  static Vocabulary build(std::span<const std::string> texts, int min_freq);

  static Vocabulary load(const std::string& path);
  void save(const std::string& path) const;

  int size() const { return static_cast<int>(id_to_token_.size()); }
  /// kUnkId for tokens outside the vocabulary.
  int id_of(const std::string& token) const;
  const std::string& token_of(int id) const;

  std::vector<int> encode(const std::string& text) const;
  /// Tokens joined by single spaces.
  std::string decode(std::span<const int> ids) const;

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;

  void add(const std::string& token);
};

std::vector<std::string> split_whitespace(const std::string& text);

}  // namespace hiersum
