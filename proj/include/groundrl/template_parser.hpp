#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace groundrl {

/// The three segments of a structured target, in required order.
enum class Segment : std::size_t { kDescription = 0, kThink = 1, kAnswer = 2 };

inline constexpr std::array<std::string_view, 3> kSegmentNames = {"description", "think", "answer"};

struct StructuredResponse {
  std::string description;
  std::string think;
  std::string answer;
  std::size_t raw_length = 0;  // whitespace-delimited token count of the raw text

  bool operator==(const StructuredResponse&) const = default;
};

struct TextSpan {
  std::size_t offset = 0;
  std::size_t length = 0;

  bool operator==(const TextSpan&) const = default;
};

struct FormatDiagnostics {
  std::array<int, 3> open_counts{};
  std::array<int, 3> close_counts{};
  std::vector<std::string> order_violations;
  std::vector<TextSpan> stray_text_spans;
  bool well_formed = false;

  int opens(Segment s) const { return open_counts[static_cast<std::size_t>(s)]; }
  int closes(Segment s) const { return close_counts[static_cast<std::size_t>(s)]; }
};

struct ParseResult {
  std::optional<StructuredResponse> response;
  FormatDiagnostics diagnostics;
};

/// Parses `<description>…</description><think>…</think><answer>…</answer>`.
///
/// Tags are matched literally and case-sensitively. A nested or repeated tag
/// counts as an extra open/close and makes the response malformed. Text
/// outside the three spans may only be whitespace. Never throws on malformed
/// input; the diagnostics say what is wrong.
ParseResult parse_structured(std::string_view text);

/// 1.0 iff the diagnostics describe a well-formed response.
double format_reward(const FormatDiagnostics& diag);

/// Content of the last `<answer>…</answer>` pair, trimmed, if any exists.
/// Used to grade accuracy on responses whose overall format is broken.
std::optional<std::string> extract_answer_span(std::string_view text);

/// Renders the canonical template for a response.
std::string serialize(const StructuredResponse& response);

/// Number of whitespace-delimited tokens.
std::size_t count_tokens(std::string_view text);

bool is_ascii_space(char c);
std::string_view trim_ascii(std::string_view s);

}  // namespace groundrl
