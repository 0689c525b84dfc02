#include "ruid/html.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>

#include "ruid/errors.hpp"

namespace ruid::html {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool is_word_char(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
}

bool is_name_char(char c) { return is_word_char(c) || c == ':'; }

std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string_view trim(std::string_view s) {
    size_t b = 0, e = s.size();
    while (b < e && is_space(s[b])) ++b;
    while (e > b && is_space(s[e - 1])) --e;
    return s.substr(b, e - b);
}

bool is_void_tag(std::string_view tag) {
    return tag == "br" || tag == "hr" || tag == "img" || tag == "input" || tag == "meta" || tag == "link";
}

bool iequals(std::string_view a, std::string_view b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i)
        if (std::tolower(static_cast<unsigned char>(a[i])) != std::tolower(static_cast<unsigned char>(b[i])))
            return false;
    return true;
}

} // namespace

const DomNode* DomNode::find_child(std::string_view tag_name) const {
    for (const auto& child : children)
        if (child.tag == tag_name) return &child;
    return nullptr;
}

std::optional<std::string> DomNode::attribute(std::string_view name) const {
    for (const auto& [k, v] : attributes)
        if (k == name) return v;
    return std::nullopt;
}

std::optional<std::string> DomNode::style_value(std::string_view property) const {
    for (const auto& [k, v] : style)
        if (k == property) return v;
    return std::nullopt;
}

const char* kind_name(ElementKind kind) {
    switch (kind) {
    case ElementKind::Rectangle: return "Rectangle";
    case ElementKind::Ellipse: return "Ellipse";
    case ElementKind::Button: return "Button";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

namespace {

class Lexer {
public:
    explicit Lexer(std::string_view src) : src_(src) {}

    std::vector<HtmlToken> run() {
        while (pos_ < src_.size()) {
            if (is_space(src_[pos_])) {
                ++pos_;
                continue;
            }
            if (src_[pos_] == '<') {
                lex_markup();
            } else {
                lex_text_word();
            }
        }
        return std::move(tokens_);
    }

private:
    void emit(HtmlToken::Kind kind, size_t begin, size_t end) {
        if (end <= begin) return;
        tokens_.push_back({kind, std::string(src_.substr(begin, end - begin)), begin});
    }

    void lex_text_word() {
        size_t begin = pos_;
        while (pos_ < src_.size() && !is_space(src_[pos_]) && src_[pos_] != '<') ++pos_;
        emit(HtmlToken::Kind::TextWord, begin, pos_);
    }

    // Comments and declarations stay single punctuation tokens so the parser
    // can skip them without mistaking their contents for document text.
    void lex_markup() {
        size_t begin = pos_;
        if (src_.substr(pos_).starts_with("<!--")) {
            size_t end = src_.find("-->", pos_ + 4);
            pos_ = (end == std::string_view::npos) ? src_.size() : end + 3;
            emit(HtmlToken::Kind::Punctuation, begin, pos_);
            return;
        }
        if (pos_ + 1 < src_.size() && src_[pos_ + 1] == '!') {
            size_t end = src_.find('>', pos_);
            pos_ = (end == std::string_view::npos) ? src_.size() : end + 1;
            emit(HtmlToken::Kind::Punctuation, begin, pos_);
            return;
        }
        bool closing = pos_ + 1 < src_.size() && src_[pos_ + 1] == '/';
        size_t name_at = pos_ + (closing ? 2 : 1);
        if (name_at >= src_.size() || !std::isalpha(static_cast<unsigned char>(src_[name_at]))) {
            // A lone '<' is document text, browser-style.
            emit(HtmlToken::Kind::TextWord, pos_, pos_ + 1);
            ++pos_;
            return;
        }
        emit(HtmlToken::Kind::Punctuation, pos_, name_at);
        pos_ = name_at;
        size_t name_begin = pos_;
        while (pos_ < src_.size() && is_name_char(src_[pos_])) ++pos_;
        emit(closing ? HtmlToken::Kind::TagClose : HtmlToken::Kind::TagOpen, name_begin, pos_);
        lex_attributes();
    }

    void lex_attributes() {
        while (pos_ < src_.size()) {
            if (is_space(src_[pos_])) {
                ++pos_;
                continue;
            }
            char c = src_[pos_];
            if (c == '>') {
                emit(HtmlToken::Kind::Punctuation, pos_, pos_ + 1);
                ++pos_;
                return;
            }
            if (c == '/') {
                emit(HtmlToken::Kind::Punctuation, pos_, pos_ + 1);
                ++pos_;
                continue;
            }
            if (c == '<') return; // malformed: next tag starts inside this one
            size_t name_begin = pos_;
            while (pos_ < src_.size() && !is_space(src_[pos_]) && src_[pos_] != '=' && src_[pos_] != '>' &&
                   src_[pos_] != '/' && src_[pos_] != '<')
                ++pos_;
            emit(HtmlToken::Kind::AttrName, name_begin, pos_);
            std::string name = to_lower(src_.substr(name_begin, pos_ - name_begin));
            skip_space();
            if (pos_ < src_.size() && src_[pos_] == '=') {
                emit(HtmlToken::Kind::Punctuation, pos_, pos_ + 1);
                ++pos_;
                lex_attr_value(name == "style");
            }
        }
    }

    void lex_attr_value(bool as_style) {
        skip_space();
        if (pos_ >= src_.size()) return;
        char quote = src_[pos_];
        if (quote == '"' || quote == '\'') {
            emit(HtmlToken::Kind::Punctuation, pos_, pos_ + 1);
            ++pos_;
            size_t begin = pos_;
            size_t end = src_.find(quote, pos_);
            if (end == std::string_view::npos) end = src_.size();
            lex_value_span(begin, end, as_style);
            pos_ = end;
            if (pos_ < src_.size()) {
                emit(HtmlToken::Kind::Punctuation, pos_, pos_ + 1);
                ++pos_;
            }
        } else {
            size_t begin = pos_;
            while (pos_ < src_.size() && !is_space(src_[pos_]) && src_[pos_] != '>') ++pos_;
            lex_value_span(begin, pos_, as_style);
        }
    }

    // Style attribute values get declaration-level tokens; everything else is
    // a single attr-value token.
    void lex_value_span(size_t begin, size_t end, bool as_style) {
        if (!as_style) {
            emit(HtmlToken::Kind::AttrValue, begin, end);
            return;
        }
        size_t cur = begin;
        while (cur < end) {
            size_t semi = src_.find(';', cur);
            if (semi == std::string_view::npos || semi > end) semi = end;
            size_t colon = src_.find(':', cur);
            if (colon != std::string_view::npos && colon < semi) {
                emit_trimmed(HtmlToken::Kind::StyleProperty, cur, colon);
                emit(HtmlToken::Kind::Punctuation, colon, colon + 1);
                emit_trimmed(HtmlToken::Kind::StyleValue, colon + 1, semi);
            } else {
                emit_trimmed(HtmlToken::Kind::StyleProperty, cur, semi);
            }
            if (semi < end) emit(HtmlToken::Kind::Punctuation, semi, semi + 1);
            cur = semi + 1;
        }
    }

    void emit_trimmed(HtmlToken::Kind kind, size_t begin, size_t end) {
        while (begin < end && is_space(src_[begin])) ++begin;
        while (end > begin && is_space(src_[end - 1])) --end;
        emit(kind, begin, end);
    }

    void skip_space() {
        while (pos_ < src_.size() && is_space(src_[pos_])) ++pos_;
    }

    std::string_view src_;
    size_t pos_ = 0;
    std::vector<HtmlToken> tokens_;
};

} // namespace

std::vector<HtmlToken> lex_html(std::string_view source) { return Lexer(source).run(); }

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

namespace {

void append_text(DomNode& node, std::string_view word) {
    if (!node.text) {
        node.text = std::string(word);
    } else {
        *node.text += ' ';
        *node.text += word;
    }
}

void add_attribute(DomNode& node, const std::string& key, std::string value) {
    for (const auto& [k, v] : node.attributes)
        if (k == key) return; // first occurrence wins
    node.attributes.emplace_back(key, std::move(value));
}

// Builds a forest of raw nodes from the token stream. Stray close tags are
// dropped; unclosed elements close when their enclosing scope ends.
struct RawParse {
    std::vector<DomNode> forest;
    std::vector<std::string> loose_words; // text outside any element
    bool has_doctype = false;
};

RawParse build_forest(const std::vector<HtmlToken>& tokens) {
    RawParse out;
    std::vector<DomNode> stack;

    auto close_top = [&]() {
        DomNode done = std::move(stack.back());
        stack.pop_back();
        if (stack.empty())
            out.forest.push_back(std::move(done));
        else
            stack.back().children.push_back(std::move(done));
    };

    size_t i = 0;
    const size_t n = tokens.size();
    while (i < n) {
        const HtmlToken& tok = tokens[i];
        switch (tok.kind) {
        case HtmlToken::Kind::TextWord:
            if (stack.empty())
                out.loose_words.push_back(tok.text);
            else
                append_text(stack.back(), tok.text);
            ++i;
            break;
        case HtmlToken::Kind::Punctuation:
            if (tok.text.size() >= 2 && tok.text[0] == '<' && tok.text[1] == '!' &&
                iequals(std::string_view(tok.text).substr(0, 9), "<!doctype"))
                out.has_doctype = true;
            ++i;
            break;
        case HtmlToken::Kind::TagClose: {
            std::string tag = to_lower(tok.text);
            // Close up to the matching open tag, if there is one.
            bool found = false;
            for (auto it = stack.rbegin(); it != stack.rend(); ++it)
                if (it->tag == tag) {
                    found = true;
                    break;
                }
            if (found) {
                while (!stack.empty() && stack.back().tag != tag) close_top();
                if (!stack.empty()) close_top();
            }
            ++i;
            break;
        }
        case HtmlToken::Kind::TagOpen: {
            DomNode node;
            node.tag = to_lower(tok.text);
            ++i;
            bool self_closed = false;
            std::string pending_attr;
            bool pending_style = false;
            while (i < n) {
                const HtmlToken& t = tokens[i];
                if (t.kind == HtmlToken::Kind::AttrName) {
                    pending_attr = to_lower(t.text);
                    pending_style = pending_attr == "style";
                    add_attribute(node, pending_attr, "");
                    ++i;
                } else if (t.kind == HtmlToken::Kind::AttrValue) {
                    for (auto& [k, v] : node.attributes)
                        if (k == pending_attr && v.empty()) v = t.text;
                    ++i;
                } else if (t.kind == HtmlToken::Kind::StyleProperty) {
                    std::string prop = to_lower(t.text);
                    std::string value;
                    size_t j = i + 1;
                    if (j < n && tokens[j].kind == HtmlToken::Kind::Punctuation && tokens[j].text == ":")
                        ++j;
                    bool has_value = j < n && tokens[j].kind == HtmlToken::Kind::StyleValue;
                    if (has_value) value = tokens[j].text;
                    if (pending_style && has_value && !prop.empty()) {
                        bool dup = false;
                        for (const auto& [k, v] : node.style)
                            if (k == prop) dup = true;
                        if (!dup) node.style.emplace_back(prop, value);
                    }
                    i = has_value ? j + 1 : i + 1;
                } else if (t.kind == HtmlToken::Kind::StyleValue) {
                    ++i; // value with no property: skip
                } else if (t.kind == HtmlToken::Kind::Punctuation) {
                    if (t.text == "/") self_closed = true;
                    ++i;
                    if (t.text == ">") break;
                    if (t.text.size() > 1 && t.text[0] == '<') break; // declaration: tag never closed
                } else {
                    break; // next tag started before this one ended
                }
            }
            // Raw style value in the attribute list is kept for verbatim
            // inspection; the parsed declarations live in node.style.
            if (self_closed || is_void_tag(node.tag)) {
                if (stack.empty())
                    out.forest.push_back(std::move(node));
                else
                    stack.back().children.push_back(std::move(node));
            } else {
                stack.push_back(std::move(node));
            }
            break;
        }
        default:
            ++i;
            break;
        }
    }
    while (!stack.empty()) close_top();
    return out;
}

bool is_head_only_tag(std::string_view tag) { return tag == "title" || tag == "meta" || tag == "link"; }

// Routes raw top-level nodes into a normalized html/head/body document.
DomTree normalize(RawParse raw) {
    DomTree tree;
    tree.has_doctype = raw.has_doctype;

    DomNode html;
    html.tag = "html";
    DomNode head;
    head.tag = "head";
    DomNode body;
    body.tag = "body";

    std::vector<DomNode> queue;
    bool adopted_html = false;
    for (auto& top : raw.forest) {
        if (top.tag == "html" && !adopted_html) {
            adopted_html = true;
            html.attributes = std::move(top.attributes);
            html.style = std::move(top.style);
            if (top.text) body.text = std::move(top.text);
            for (auto& child : top.children) queue.push_back(std::move(child));
        } else {
            queue.push_back(std::move(top));
        }
    }

    bool adopted_head = false, adopted_body = false;
    for (auto& node : queue) {
        if (node.tag == "head") {
            if (!adopted_head) {
                adopted_head = true;
                head.attributes = std::move(node.attributes);
                head.style = std::move(node.style);
                head.text = std::move(node.text);
            }
            for (auto& child : node.children) head.children.push_back(std::move(child));
        } else if (node.tag == "body") {
            if (!adopted_body) {
                adopted_body = true;
                body.attributes = std::move(node.attributes);
                body.style = std::move(node.style);
            }
            if (node.text) {
                if (body.text)
                    *body.text += " " + *node.text;
                else
                    body.text = std::move(node.text);
            }
            for (auto& child : node.children) body.children.push_back(std::move(child));
        } else if (is_head_only_tag(node.tag)) {
            head.children.push_back(std::move(node));
        } else {
            body.children.push_back(std::move(node));
        }
    }
    for (const auto& word : raw.loose_words) append_text(body, word);

    html.children.push_back(std::move(head));
    html.children.push_back(std::move(body));
    tree.root = std::move(html);
    return tree;
}

} // namespace

DomTree parse_html(std::string_view source) {
    if (source.find('<') == std::string_view::npos)
        throw IrrecoverableParse("no markup found in input");
    return normalize(build_forest(lex_html(source)));
}

// ---------------------------------------------------------------------------
// Element extraction
// ---------------------------------------------------------------------------

namespace {

std::optional<double> parse_pct_value(std::string_view raw) {
    std::string_view v = trim(raw);
    if (!v.empty() && v.back() == '%') v = trim(v.substr(0, v.size() - 1));
    if (v.empty()) return std::nullopt;
    double out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) return std::nullopt;
    return out;
}

bool is_ellipse_radius(std::string_view raw) {
    // The generated code writes "border-radius: 50%"; the value also shows up
    // with the percent sign dropped, so a bare 50 counts too.
    auto v = parse_pct_value(raw);
    return v && *v == 50.0;
}

std::optional<double> clamped_at_zero(std::optional<double> v) {
    if (v && *v < 0) return 0.0;
    return v;
}

} // namespace

std::vector<RuidElement> extract_elements(const DomTree& tree, int* skipped) {
    std::vector<RuidElement> out;
    int skip_count = 0;
    const DomNode* body = tree.root.find_child("body");
    if (!body) {
        if (skipped) *skipped = 0;
        return out;
    }
    for (const DomNode& child : body->children) {
        if (child.tag != "div" && child.tag != "button") {
            ++skip_count;
            continue;
        }
        RuidElement elem;
        if (child.tag == "button") {
            elem.kind = ElementKind::Button;
        } else {
            auto radius = child.style_value("border-radius");
            elem.kind = (radius && is_ellipse_radius(*radius)) ? ElementKind::Ellipse : ElementKind::Rectangle;
        }
        if (auto v = child.style_value("left")) elem.left_pct = clamped_at_zero(parse_pct_value(*v));
        if (auto v = child.style_value("top")) elem.top_pct = clamped_at_zero(parse_pct_value(*v));
        if (auto v = child.style_value("width")) elem.width_pct = parse_pct_value(*v);
        if (auto v = child.style_value("height")) elem.height_pct = parse_pct_value(*v);
        if (elem.kind != ElementKind::Button) {
            if (auto v = child.style_value("background-color")) elem.background = parse_hex_color(*v);
        }
        if (child.tag == "button") {
            if (child.text) elem.text = *child.text;
        } else if (const DomNode* p = child.find_child("p")) {
            if (p->text) elem.text = *p->text;
        }
        out.push_back(std::move(elem));
    }
    if (skipped) *skipped = skip_count;
    return out;
}

// ---------------------------------------------------------------------------
// Canonical serialization
// ---------------------------------------------------------------------------

namespace {

std::string style_attr_text(const DomNode& node) {
    std::string out;
    for (const auto& [prop, value] : node.style) {
        if (!out.empty()) out += ' ';
        out += prop;
        out += ": ";
        out += value;
        out += ';';
    }
    return out;
}

void serialize_node(const DomNode& node, int depth, std::string& out) {
    std::string indent(static_cast<size_t>(depth) * 2, ' ');
    std::string open = "<" + node.tag;
    for (const auto& [k, v] : node.attributes) {
        open += ' ';
        open += k;
        open += "=\"";
        open += (k == "style") ? style_attr_text(node) : v;
        open += '"';
    }
    open += '>';

    if (node.children.empty()) {
        out += indent + open + (node.text ? *node.text : "") + "</" + node.tag + ">\n";
        return;
    }
    out += indent + open + "\n";
    if (node.text) out += indent + "  " + *node.text + "\n";
    for (const auto& child : node.children) serialize_node(child, depth + 1, out);
    out += indent + "</" + node.tag + ">\n";
}

} // namespace

std::string serialize_canonical(const DomTree& tree) {
    std::string out;
    if (tree.has_doctype) out += "<!DOCTYPE html>\n";
    serialize_node(tree.root, 0, out);
    return out;
}

// ---------------------------------------------------------------------------
// Code tokenization
// ---------------------------------------------------------------------------

std::vector<std::string> tokenize_code(std::string_view source) {
    std::vector<std::string> tokens;
    std::string word;
    auto flush = [&]() {
        if (!word.empty()) {
            tokens.push_back(word);
            word.clear();
        }
    };
    for (char c : source) {
        if (is_space(c)) {
            flush();
        } else if (is_word_char(c)) {
            word.push_back(c);
        } else {
            flush();
            tokens.emplace_back(1, c);
        }
    }
    flush();
    return tokens;
}

std::string format_pct(double value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f", value);
    std::string s = buf;
    while (!s.empty() && s.back() == '0') s.pop_back();
    if (!s.empty() && s.back() == '.') s.pop_back();
    if (s == "-0") s = "0";
    return s;
}

std::optional<Rgb> parse_hex_color(std::string_view text) {
    std::string_view v = trim(text);
    if (v.empty() || v[0] != '#') return std::nullopt;
    v.remove_prefix(1);
    auto hex_digit = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        return -1;
    };
    if (v.size() == 3) {
        int d[3];
        for (int i = 0; i < 3; ++i)
            if ((d[i] = hex_digit(v[i])) < 0) return std::nullopt;
        return Rgb{static_cast<uint8_t>(d[0] * 17), static_cast<uint8_t>(d[1] * 17),
                   static_cast<uint8_t>(d[2] * 17)};
    }
    if (v.size() != 6) return std::nullopt;
    int d[6];
    for (int i = 0; i < 6; ++i)
        if ((d[i] = hex_digit(v[i])) < 0) return std::nullopt;
    return Rgb{static_cast<uint8_t>(d[0] * 16 + d[1]), static_cast<uint8_t>(d[2] * 16 + d[3]),
               static_cast<uint8_t>(d[4] * 16 + d[5])};
}

} // namespace ruid::html
