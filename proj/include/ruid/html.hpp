#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ruid/rgb.hpp"

// Lexing, parsing, canonical serialization and semantic extraction for the
// restricted HTML subset the generated UI code lives in.
//
// The parser is deliberately forgiving: its inputs include model outputs,
// which may be arbitrarily broken. Unclosed tags are auto-closed at the end
// of the enclosing scope, unknown attributes are kept verbatim, and the only
// unrecoverable input is one that contains no '<' at all.

namespace ruid::html {

struct HtmlToken {
    enum class Kind {
        TagOpen,
        TagClose,
        AttrName,
        AttrValue,
        StyleProperty,
        StyleValue,
        TextWord,
        Punctuation,
    };

    Kind kind;
    std::string text;
    size_t position = 0; // byte offset into the source
};

struct DomNode {
    std::string tag;
    std::vector<std::pair<std::string, std::string>> attributes; // insertion order, unique keys
    std::vector<std::pair<std::string, std::string>> style;      // parsed from the style attribute
    std::vector<DomNode> children;
    std::optional<std::string> text; // direct text content, whitespace-collapsed

    const DomNode* find_child(std::string_view tag_name) const;
    std::optional<std::string> attribute(std::string_view name) const;
    std::optional<std::string> style_value(std::string_view property) const;
};

struct DomTree {
    DomNode root; // always an <html> element
    bool has_doctype = false;
};

enum class ElementKind { Rectangle, Ellipse, Button };

// A semantic UI element: geometry in percent of the viewport, fill color
// (absent for buttons) and a one-word label. Fields whose style values were
// malformed stay unset.
struct RuidElement {
    ElementKind kind = ElementKind::Rectangle;
    std::optional<double> left_pct;
    std::optional<double> top_pct;
    std::optional<double> width_pct;
    std::optional<double> height_pct;
    std::optional<Rgb> background;
    std::string text;
};

const char* kind_name(ElementKind kind);

// Lossless lexer: concatenating token texts, restoring the whitespace gaps
// implied by their positions, reproduces the input.
std::vector<HtmlToken> lex_html(std::string_view source);

// Error-recovering parse. Throws IrrecoverableParse only when the source
// contains no '<' at all; everything else yields a (possibly empty) tree.
DomTree parse_html(std::string_view source);

// One RuidElement per direct body child that is a div or button, in document
// order. Children of other tags are skipped; *skipped (if given) receives
// the count.
std::vector<RuidElement> extract_elements(const DomTree& tree, int* skipped = nullptr);

// Deterministic text form: 2-space indentation, attributes and style
// properties in stored order. Fixed point of parse -> serialize.
std::string serialize_canonical(const DomTree& tree);

// Flat token stream for BLEU-style metrics. Words are runs of
// [A-Za-z0-9_-]; every other non-space byte is a single-character token.
std::vector<std::string> tokenize_code(std::string_view source);

// Formats a percentage with at most 4 decimal places, trailing zeros
// stripped ("40", "12.5", "23.4568").
std::string format_pct(double value);

std::optional<Rgb> parse_hex_color(std::string_view text);

} // namespace ruid::html
