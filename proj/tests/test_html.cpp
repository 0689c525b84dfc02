#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <string>
#include <vector>

#include "ruid/errors.hpp"
#include "ruid/gen.hpp"
#include "ruid/html.hpp"

using namespace ruid;

namespace {

bool is_ws(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

// Every token must quote its source span verbatim, and every byte outside
// all token spans must be whitespace.
void check_lossless(const std::string& source) {
    auto tokens = html::lex_html(source);
    std::vector<char> covered(source.size(), 0);
    for (const auto& tok : tokens) {
        REQUIRE(tok.position + tok.text.size() <= source.size());
        CHECK(source.substr(tok.position, tok.text.size()) == tok.text);
        for (size_t i = 0; i < tok.text.size(); ++i) covered[tok.position + i] = 1;
    }
    for (size_t i = 0; i < source.size(); ++i)
        if (!covered[i]) CHECK(is_ws(source[i]));
}

const html::DomNode& body_of(const html::DomTree& tree) {
    const html::DomNode* body = tree.root.find_child("body");
    REQUIRE(body != nullptr);
    return *body;
}

} // namespace

TEST_CASE("lexer offsets reconstruct the source") {
    const char* cases[] = {
        "<!DOCTYPE html>\n<html>\n  <head>\n    <title>2 Circles, 1 Blocks</title>\n  </head>\n"
        "  <body>\n    <div style=\"position: absolute; left: 4.5%; top: 0%;\">x</div>\n"
        "  </body>\n</html>\n",
        "<div style=\"left: 1%; left: 2%\">hi there</div>",
        "<div id=abc class='q'>text</div>",
        "<div id=\"unterminated><p>x</p>",
        "<DIV STYLE=\"LEFT: 30%;\">",
        "  leading text <br/> trailing  ",
        "<!-- comment <div> --><p>t</p>",
        "< notatag <div/>",
        "<div style=\"  ;; left :  7 % ; \">",
        "<button style=\"width: 10%;\">go</button>",
    };
    for (const char* c : cases) check_lossless(c);
}

TEST_CASE("unclosed elements close at end of scope") {
    auto tree = html::parse_html("<div><p>hi</p>");
    const auto& body = body_of(tree);
    REQUIRE(body.children.size() == 1);
    CHECK(body.children[0].tag == "div");
    REQUIRE(body.children[0].children.size() == 1);
    CHECK(body.children[0].children[0].tag == "p");
    CHECK(body.children[0].children[0].text == "hi");
}

TEST_CASE("stray close tags are dropped") {
    auto tree = html::parse_html("</div><p>x</p>");
    const auto& body = body_of(tree);
    REQUIRE(body.children.size() == 1);
    CHECK(body.children[0].tag == "p");
    CHECK(body.children[0].text == "x");
}

TEST_CASE("first duplicate attribute wins") {
    auto tree = html::parse_html("<div id=\"a\" id=\"b\"></div>");
    CHECK(body_of(tree).children[0].attribute("id") == "a");
}

TEST_CASE("first duplicate style property wins") {
    auto tree = html::parse_html("<div style=\"left: 1%; left: 2%;\"></div>");
    CHECK(body_of(tree).children[0].style_value("left") == "1%");
}

TEST_CASE("second style attribute cannot override the first") {
    auto tree = html::parse_html("<div style=\"left: 1%;\" style=\"left: 2%;\"></div>");
    CHECK(body_of(tree).children[0].style_value("left") == "1%");
}

TEST_CASE("unquoted and single-quoted attribute values") {
    auto tree = html::parse_html("<div id=abc class='q r'></div>");
    const auto& div = body_of(tree).children[0];
    CHECK(div.attribute("id") == "abc");
    CHECK(div.attribute("class") == "q r");
}

TEST_CASE("unterminated quote swallows the rest of the document") {
    auto tree = html::parse_html("<div id=\"abc><p>x</p>");
    const auto& body = body_of(tree);
    REQUIRE(body.children.size() == 1);
    CHECK(body.children[0].tag == "div");
    CHECK(body.children[0].children.empty());
    CHECK(body.children[0].attribute("id") == "abc><p>x</p>");
}

TEST_CASE("tag opened inside an unfinished tag becomes its child") {
    auto tree = html::parse_html("<div <p>hi</p></div>");
    const auto& body = body_of(tree);
    REQUIRE(body.children.size() == 1);
    CHECK(body.children[0].tag == "div");
    CHECK(body.children[0].attributes.empty());
    REQUIRE(body.children[0].children.size() == 1);
    CHECK(body.children[0].children[0].text == "hi");
}

TEST_CASE("tag and attribute names are case-insensitive, values verbatim") {
    auto tree = html::parse_html("<DIV STYLE=\"LEFT: 30%; Background-Color: #A0a0A0;\"></DIV>");
    const auto& div = body_of(tree).children[0];
    CHECK(div.tag == "div");
    CHECK(div.style_value("left") == "30%");
    CHECK(div.style_value("background-color") == "#A0a0A0");
}

TEST_CASE("void and self-closed tags take no children") {
    auto tree = html::parse_html("<body><br><div></div><img src=\"x\"><span/></body>");
    const auto& body = body_of(tree);
    REQUIRE(body.children.size() == 4);
    CHECK(body.children[0].tag == "br");
    CHECK(body.children[0].children.empty());
    CHECK(body.children[1].tag == "div");
    CHECK(body.children[2].tag == "img");
    CHECK(body.children[3].tag == "span");
    CHECK(body.children[3].children.empty());
}

TEST_CASE("comments and declarations produce no nodes") {
    auto tree = html::parse_html("<body><!-- <div> --><p>t</p></body>");
    const auto& body = body_of(tree);
    REQUIRE(body.children.size() == 1);
    CHECK(body.children[0].tag == "p");
}

TEST_CASE("doctype detection is case-insensitive") {
    CHECK(html::parse_html("<!DOCTYPE html><html></html>").has_doctype);
    CHECK(html::parse_html("<!doctype HTML><html></html>").has_doctype);
    CHECK_FALSE(html::parse_html("<html></html>").has_doctype);
}

TEST_CASE("input with no markup at all is irrecoverable") {
    CHECK_THROWS_AS(html::parse_html("plain words only"), IrrecoverableParse);
    CHECK_THROWS_AS(html::parse_html(""), IrrecoverableParse);
}

TEST_CASE("text outside any element lands in body") {
    auto tree = html::parse_html("hello <div></div> world");
    const auto& body = body_of(tree);
    CHECK(body.text == "hello world");
    REQUIRE(body.children.size() == 1);
    CHECK(body.children[0].tag == "div");
}

TEST_CASE("head-only tags route to the synthesized head") {
    auto tree = html::parse_html("<title>My Page</title><div></div>");
    const html::DomNode* head = tree.root.find_child("head");
    REQUIRE(head != nullptr);
    const html::DomNode* title = head->find_child("title");
    REQUIRE(title != nullptr);
    CHECK(title->text == "My Page");
    CHECK(body_of(tree).children.size() == 1);
}

TEST_CASE("repeated body tags merge in document order") {
    auto tree = html::parse_html(
        "<body><div id=\"a\"></div></body><body><div id=\"b\"></div></body>");
    const auto& body = body_of(tree);
    REQUIRE(body.children.size() == 2);
    CHECK(body.children[0].attribute("id") == "a");
    CHECK(body.children[1].attribute("id") == "b");
}

TEST_CASE("lone angle bracket is text") {
    auto tree = html::parse_html("< notatag <div></div>");
    const auto& body = body_of(tree);
    CHECK(body.text == "< notatag");
    REQUIRE(body.children.size() == 1);
}

TEST_CASE("extraction classifies kinds and parses geometry") {
    auto tree = html::parse_html(
        "<body>"
        "<div style=\"left: 10%; top: 20%; width: 15%; height: 25%; background-color: #5B3F09;\">"
        "<p>word</p></div>"
        "<div style=\"border-radius: 50%; background-color: #FFF;\"></div>"
        "<div style=\"border-radius: 50;\"></div>"
        "<div style=\"border-radius: 49%;\"></div>"
        "<button style=\"left: 5%; background-color: #102030;\">tap</button>"
        "<span>skip me</span>"
        "</body>");
    int skipped = 0;
    auto elems = html::extract_elements(tree, &skipped);
    CHECK(skipped == 1);
    REQUIRE(elems.size() == 5);

    CHECK(elems[0].kind == html::ElementKind::Rectangle);
    CHECK(elems[0].left_pct == 10.0);
    CHECK(elems[0].top_pct == 20.0);
    CHECK(elems[0].width_pct == 15.0);
    CHECK(elems[0].height_pct == 25.0);
    CHECK(elems[0].background == Rgb{0x5B, 0x3F, 0x09});
    CHECK(elems[0].text == "word");

    CHECK(elems[1].kind == html::ElementKind::Ellipse);
    CHECK(elems[1].background == Rgb{255, 255, 255});
    CHECK(elems[2].kind == html::ElementKind::Ellipse);
    CHECK(elems[3].kind == html::ElementKind::Rectangle);

    CHECK(elems[4].kind == html::ElementKind::Button);
    CHECK(elems[4].left_pct == 5.0);
    CHECK_FALSE(elems[4].background.has_value());
    CHECK(elems[4].text == "tap");
}

TEST_CASE("extraction clamps negative offsets but not sizes") {
    auto tree = html::parse_html(
        "<body><div style=\"left: -5%; top: -0.1%; width: -8%; height: 12%;\"></div></body>");
    auto elems = html::extract_elements(tree);
    REQUIRE(elems.size() == 1);
    CHECK(elems[0].left_pct == 0.0);
    CHECK(elems[0].top_pct == 0.0);
    CHECK(elems[0].width_pct == -8.0);
    CHECK(elems[0].height_pct == 12.0);
}

TEST_CASE("extraction leaves malformed values unset") {
    auto tree = html::parse_html(
        "<body><div style=\"left: abc%; top: ; width: 5px7; height: 12 %;\"></div></body>");
    auto elems = html::extract_elements(tree);
    REQUIRE(elems.size() == 1);
    CHECK_FALSE(elems[0].left_pct.has_value());
    CHECK_FALSE(elems[0].top_pct.has_value());
    CHECK_FALSE(elems[0].width_pct.has_value());
    CHECK(elems[0].height_pct == 12.0);
}

TEST_CASE("div text comes from the first p child only") {
    auto tree = html::parse_html("<body><div>stray<p>word</p><p>second</p></div></body>");
    auto elems = html::extract_elements(tree);
    REQUIRE(elems.size() == 1);
    CHECK(elems[0].text == "word");
}

TEST_CASE("serialization is a fixed point of parsing") {
    const char* messy[] = {
        "<div><p>hi</p>",
        "<DIV STYLE=\"LEFT: 30%;\">x",
        "hello <div></div> world",
        "<title>T</title><button>b</button>",
        "<body><div style=\"left: 1%; left: 2%;\"><p>w</p></div></body>",
    };
    for (const char* src : messy) {
        std::string once = html::serialize_canonical(html::parse_html(src));
        std::string twice = html::serialize_canonical(html::parse_html(once));
        CHECK(once == twice);
    }
}

TEST_CASE("generated documents round-trip exactly") {
    gen::GenConfig cfg;
    cfg.n_samples = 1000;
    cfg.seed = 123;
    auto words = gen::load_wordlist(cfg.wordlist_path);
    auto samples = gen::generate_samples(cfg, words);
    REQUIRE(samples.size() == 1000);
    for (const auto& sample : samples) {
        auto tree = html::parse_html(sample.code);
        CHECK(html::serialize_canonical(tree) == sample.code);
        auto elems = html::extract_elements(tree);
        REQUIRE(elems.size() == sample.elements.size());
        for (size_t i = 0; i < elems.size(); ++i) {
            const auto& got = elems[i];
            const auto& want = sample.elements[i];
            CHECK(got.kind == want.kind);
            CHECK(got.left_pct == want.left_pct);
            CHECK(got.top_pct == want.top_pct);
            CHECK(got.width_pct == want.width_pct);
            CHECK(got.height_pct == want.height_pct);
            CHECK(got.background == want.background);
            CHECK(got.text == want.text);
        }
    }
}

TEST_CASE("code tokenizer splits words and punctuation") {
    auto tokens = html::tokenize_code("<div style=\"left: 3.5%;\">hi</div>");
    std::vector<std::string> expected = {"<", "div", "style", "=", "\"", "left", ":", "3",
                                         ".", "5",   "%",     ";", "\"", ">",    "hi", "<",
                                         "/", "div", ">"};
    CHECK(tokens == expected);
    CHECK(html::tokenize_code("").empty());
    CHECK(html::tokenize_code("  \n\t ").empty());
    CHECK(html::tokenize_code("snake_case-word9") == std::vector<std::string>{"snake_case-word9"});
}

TEST_CASE("percent formatting trims to four decimals") {
    CHECK(html::format_pct(40.0) == "40");
    CHECK(html::format_pct(12.5) == "12.5");
    CHECK(html::format_pct(23.45678) == "23.4568");
    CHECK(html::format_pct(10.10) == "10.1");
    CHECK(html::format_pct(0.0) == "0");
    CHECK(html::format_pct(-0.00001) == "0");
    CHECK(html::format_pct(79.99999) == "80");
}

TEST_CASE("hex colors parse in 3 and 6 digit forms") {
    CHECK(html::parse_hex_color("#FFF") == Rgb{255, 255, 255});
    CHECK(html::parse_hex_color("#5B3F09") == Rgb{0x5B, 0x3F, 0x09});
    CHECK(html::parse_hex_color("#a0b1c2") == Rgb{0xA0, 0xB1, 0xC2});
    CHECK(html::parse_hex_color(" #123 ") == Rgb{0x11, 0x22, 0x33});
    CHECK_FALSE(html::parse_hex_color("123456").has_value());
    CHECK_FALSE(html::parse_hex_color("#12").has_value());
    CHECK_FALSE(html::parse_hex_color("#12345").has_value());
    CHECK_FALSE(html::parse_hex_color("#GGGGGG").has_value());
    CHECK_FALSE(html::parse_hex_color("").has_value());
}
