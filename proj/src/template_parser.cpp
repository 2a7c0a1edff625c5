#include "groundrl/template_parser.hpp"

namespace groundrl {

namespace {

struct TagEvent {
  std::size_t segment;
  bool open;
  std::size_t pos;
  std::size_t len;
};

constexpr std::size_t kNone = 3;

// Returns the tag starting at text[pos], if any.
std::optional<TagEvent> match_tag(std::string_view text, std::size_t pos) {
  std::string_view rest = text.substr(pos);
  const bool close = rest.size() > 1 && rest[1] == '/';
  const std::size_t name_start = close ? 2 : 1;
  for (std::size_t s = 0; s < kSegmentNames.size(); ++s) {
    const std::string_view name = kSegmentNames[s];
    const std::size_t len = name_start + name.size() + 1;
    if (rest.size() >= len && rest.substr(name_start, name.size()) == name && rest[len - 1] == '>') {
      return TagEvent{s, !close, pos, len};
    }
  }
  return std::nullopt;
}

std::string tag_text(std::size_t segment, bool open) {
  std::string out = open ? "<" : "</";
  out += kSegmentNames[segment];
  out += '>';
  return out;
}

void note_stray(std::string_view text, std::size_t begin, std::size_t end, std::vector<TextSpan>& out) {
  std::size_t first = begin;
  while (first < end && is_ascii_space(text[first])) ++first;
  if (first == end) return;
  std::size_t last = end;
  while (last > first && is_ascii_space(text[last - 1])) --last;
  out.push_back({first, last - first});
}

}  // namespace

bool is_ascii_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

std::string_view trim_ascii(std::string_view s) {
  while (!s.empty() && is_ascii_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_ascii_space(s.back())) s.remove_suffix(1);
  return s;
}

std::size_t count_tokens(std::string_view text) {
  std::size_t n = 0;
  bool in_token = false;
  for (char c : text) {
    const bool space = is_ascii_space(c);
    if (!space && !in_token) ++n;
    in_token = !space;
  }
  return n;
}

ParseResult parse_structured(std::string_view text) {
  ParseResult result;
  FormatDiagnostics& diag = result.diagnostics;

  std::vector<TagEvent> events;
  for (std::size_t pos = text.find('<'); pos != std::string_view::npos; pos = text.find('<', pos + 1)) {
    if (auto tag = match_tag(text, pos)) {
      events.push_back(*tag);
      pos += tag->len - 1;
    }
  }

  std::size_t current = kNone;       // segment currently open at top level
  std::size_t depth = 0;             // nesting depth of any tags inside `current`
  std::size_t highest_opened = kNone;
  std::size_t outside_from = 0;      // start of the current top-level text run
  std::array<std::size_t, 3> inner_begin{};
  std::array<std::size_t, 3> inner_end{};

  for (const TagEvent& ev : events) {
    if (ev.open) {
      ++diag.open_counts[ev.segment];
      if (current != kNone) {
        diag.order_violations.push_back(tag_text(ev.segment, true) + " opened inside " + tag_text(current, true));
        ++depth;
        continue;
      }
      note_stray(text, outside_from, ev.pos, diag.stray_text_spans);
      if (highest_opened != kNone && ev.segment <= highest_opened) {
        diag.order_violations.push_back(tag_text(ev.segment, true) + " appears after " +
                                        tag_text(highest_opened, true));
      }
      if (highest_opened == kNone || ev.segment > highest_opened) highest_opened = ev.segment;
      current = ev.segment;
      inner_begin[ev.segment] = ev.pos + ev.len;
    } else {
      ++diag.close_counts[ev.segment];
      if (current == kNone) {
        note_stray(text, outside_from, ev.pos, diag.stray_text_spans);
        outside_from = ev.pos + ev.len;
        diag.order_violations.push_back(tag_text(ev.segment, false) + " without matching open");
        continue;
      }
      if (depth > 0) {
        --depth;
        continue;
      }
      if (ev.segment != current) {
        diag.order_violations.push_back(tag_text(ev.segment, false) + " closes " + tag_text(current, true));
      }
      inner_end[current] = ev.pos;
      current = kNone;
      outside_from = ev.pos + ev.len;
    }
  }
  if (current != kNone) {
    diag.order_violations.push_back(tag_text(current, true) + " never closed");
  } else {
    note_stray(text, outside_from, text.size(), diag.stray_text_spans);
  }

  bool counts_ok = true;
  for (std::size_t s = 0; s < 3; ++s) {
    counts_ok = counts_ok && diag.open_counts[s] == 1 && diag.close_counts[s] == 1;
  }
  diag.well_formed = counts_ok && diag.order_violations.empty() && diag.stray_text_spans.empty();

  if (diag.well_formed) {
    auto segment = [&](std::size_t s) {
      return std::string(trim_ascii(text.substr(inner_begin[s], inner_end[s] - inner_begin[s])));
    };
    result.response = StructuredResponse{segment(0), segment(1), segment(2), count_tokens(text)};
  }
  return result;
}

double format_reward(const FormatDiagnostics& diag) { return diag.well_formed ? 1.0 : 0.0; }

std::optional<std::string> extract_answer_span(std::string_view text) {
  constexpr std::string_view kOpen = "<answer>";
  constexpr std::string_view kClose = "</answer>";
  const std::size_t close = text.rfind(kClose);
  if (close == std::string_view::npos) return std::nullopt;
  const std::size_t open = text.substr(0, close).rfind(kOpen);
  if (open == std::string_view::npos) return std::nullopt;
  const std::size_t begin = open + kOpen.size();
  return std::string(trim_ascii(text.substr(begin, close - begin)));
}

std::string serialize(const StructuredResponse& response) {
  std::string out;
  out.reserve(response.description.size() + response.think.size() + response.answer.size() + 64);
  out += "<description>";
  out += response.description;
  out += "</description><think>";
  out += response.think;
  out += "</think><answer>";
  out += response.answer;
  out += "</answer>";
  return out;
}

}  // namespace groundrl
