// Text form of an event directory.
//
//   TABLE 10   ZEDFILEX (ID, Name(4), Options)       store files
//   TABLE 11   ZEDMETAX (ID, Name, OFF)              non-event records
//   TABLE 12   ZEDIRX   (ID, GAFTyp, Nr1, Nr2,
//                        TStam11, TStam12, TStam21, TStam22, OFF)
//
// Rows are comma separated and end with ';'. Each table ends with
// "END TABLE". Strings are single quoted with '' as the escaped quote.

#include <cctype>
#include <charconv>
#include <cinttypes>
#include <cstdio>
#include <optional>

#include "evidx/event_directory.hpp"

namespace evidx {

namespace {

std::string quote(std::string_view s) {
  std::string out = "'";
  for (char c : s) {
    out += c;
    if (c == '\'') out += '\'';
  }
  out += '\'';
  return out;
}

// ---------------------------------------------------------------------------
// Tokenizer

enum class Tok { kInt, kString, kHex, kComma, kSemicolon, kWord, kEof };

struct Token {
  Tok kind = Tok::kEof;
  std::string text;
  std::uint64_t number = 0;
  std::size_t line = 1;
  std::size_t column = 1;
};

class Lexer {
 public:
  explicit Lexer(std::string_view text) : text_(text) {}

  Token next() {
    skip_blank();
    Token t;
    t.line = line_;
    t.column = column();
    if (pos_ >= text_.size()) return t;
    char c = text_[pos_];
    if (c == ',') {
      advance();
      t.kind = Tok::kComma;
    } else if (c == ';') {
      advance();
      t.kind = Tok::kSemicolon;
    } else if (c == '\'') {
      t.kind = Tok::kString;
      t.text = quoted(t);
    } else if ((c == 'X' || c == 'x') && pos_ + 1 < text_.size() && text_[pos_ + 1] == '\'') {
      advance();
      t.kind = Tok::kHex;
      t.text = quoted(t);
      if (t.text.empty() || t.text.size() > 8) {
        throw ParseError("hex field must have 1 to 8 digits: X'" + t.text + "'", t.line, t.column);
      }
      auto [p, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), t.number, 16);
      if (ec != std::errc() || p != t.text.data() + t.text.size()) {
        throw ParseError("bad hex digits: X'" + t.text + "'", t.line, t.column);
      }
    } else if (std::isdigit(static_cast<unsigned char>(c))) {
      std::size_t start = pos_;
      while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) advance();
      t.kind = Tok::kInt;
      t.text = std::string(text_.substr(start, pos_ - start));
      auto [p, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), t.number);
      if (ec != std::errc()) throw ParseError("integer out of range: " + t.text, t.line, t.column);
    } else if (std::isalpha(static_cast<unsigned char>(c))) {
      std::size_t start = pos_;
      while (pos_ < text_.size() && std::isalnum(static_cast<unsigned char>(text_[pos_]))) advance();
      t.kind = Tok::kWord;
      t.text = std::string(text_.substr(start, pos_ - start));
      for (char& ch : t.text) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    } else {
      throw ParseError(std::string("unexpected character '") + c + "'", t.line, t.column);
    }
    return t;
  }

 private:
  void advance() {
    if (text_[pos_] == '\n') {
      ++line_;
      line_start_ = pos_ + 1;
    }
    ++pos_;
  }

  std::size_t column() const { return pos_ - line_start_ + 1; }

  void skip_blank() {
    while (pos_ < text_.size()) {
      char c = text_[pos_];
      if (std::isspace(static_cast<unsigned char>(c))) {
        advance();
      } else if (c == '/' && pos_ + 1 < text_.size() && text_[pos_ + 1] == '*') {
        std::size_t line = line_, col = column();
        advance();
        advance();
        while (pos_ + 1 < text_.size() && !(text_[pos_] == '*' && text_[pos_ + 1] == '/')) advance();
        if (pos_ + 1 >= text_.size()) throw ParseError("unterminated comment", line, col);
        advance();
        advance();
      } else {
        break;
      }
    }
  }

  // Consumes a '...' literal starting at the current quote.
  std::string quoted(const Token& t) {
    advance();
    std::string out;
    for (;;) {
      if (pos_ >= text_.size()) throw ParseError("unterminated string", t.line, t.column);
      char c = text_[pos_];
      if (c == '\n') throw ParseError("newline inside string", t.line, t.column);
      advance();
      if (c == '\'') {
        if (pos_ < text_.size() && text_[pos_] == '\'') {
          advance();
          out += '\'';
          continue;
        }
        return out;
      }
      out += c;
    }
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
  std::size_t line_start_ = 0;
};

const char* table_name(std::uint64_t id) {
  switch (id) {
    case 10: return "ZEDFILEX";
    case 11: return "ZEDMETAX";
    case 12: return "ZEDIRX";
    default: return "?";
  }
}

class Parser {
 public:
  explicit Parser(std::string_view text) : lex_(text) { tok_ = lex_.next(); }

  EventDirectory parse() {
    bool seen[3] = {false, false, false};
    while (tok_.kind != Tok::kEof) {
      if (!(tok_.kind == Tok::kWord && tok_.text == "TABLE")) {
        fail("expected TABLE");
      }
      Token table_tok = tok_;
      shift();
      if (tok_.kind != Tok::kInt) fail("expected table id after TABLE");
      std::uint64_t id = tok_.number;
      if (id < 10 || id > 12) fail("unknown table id " + tok_.text);
      if (seen[id - 10]) fail("table " + tok_.text + " appears twice");
      seen[id - 10] = true;
      shift();
      parse_rows(id, table_tok);
    }
    return std::move(dir_);
  }

 private:
  [[noreturn]] void fail(const std::string& msg) { throw ParseError(msg, tok_.line, tok_.column); }

  void shift() { tok_ = lex_.next(); }

  void parse_rows(std::uint64_t id, const Token& table_tok) {
    for (;;) {
      if (tok_.kind == Tok::kEof || (tok_.kind == Tok::kWord && tok_.text == "TABLE")) {
        throw ParseError("table " + std::to_string(id) + " (" + table_name(id) +
                             ") not terminated by END TABLE",
                         table_tok.line, table_tok.column);
      }
      if (tok_.kind == Tok::kWord && tok_.text == "END") {
        shift();
        if (!(tok_.kind == Tok::kWord && tok_.text == "TABLE")) fail("expected TABLE after END");
        shift();
        return;
      }
      std::vector<Token> row = read_row();
      switch (id) {
        case 10: file_row(row); break;
        case 11: meta_row(row); break;
        case 12: dir_row(row); break;
      }
    }
  }

  std::vector<Token> read_row() {
    std::vector<Token> row;
    for (;;) {
      if (tok_.kind != Tok::kInt && tok_.kind != Tok::kString && tok_.kind != Tok::kHex) {
        fail("expected a field value");
      }
      row.push_back(tok_);
      shift();
      if (tok_.kind == Tok::kSemicolon) {
        shift();
        return row;
      }
      if (tok_.kind != Tok::kComma) fail("expected ',' or ';'");
      shift();
    }
  }

  static void expect_shape(const std::vector<Token>& row, std::initializer_list<Tok> shape,
                           const char* table) {
    if (row.size() != shape.size()) {
      throw ParseError(std::string(table) + " row needs " + std::to_string(shape.size()) +
                           " fields, found " + std::to_string(row.size()),
                       row.front().line, row.front().column);
    }
    std::size_t i = 0;
    for (Tok want : shape) {
      if (row[i].kind != want) {
        throw ParseError(std::string(table) + " field " + std::to_string(i + 1) +
                             " has the wrong type",
                         row[i].line, row[i].column);
      }
      ++i;
    }
  }

  static std::uint32_t u32(const Token& t) {
    if (t.number > 0xFFFFFFFFull) throw ParseError("value exceeds 32 bits: " + t.text, t.line, t.column);
    return static_cast<std::uint32_t>(t.number);
  }

  void file_row(const std::vector<Token>& row) {
    using enum Tok;
    expect_shape(row, {kInt, kString, kString, kString, kString, kString}, "ZEDFILEX");
    DirFileRef f;
    f.id = u32(row[0]);
    f.name = row[1].text + row[2].text + row[3].text + row[4].text;
    f.options = row[5].text;
    dir_.files.push_back(std::move(f));
  }

  void meta_row(const std::vector<Token>& row) {
    using enum Tok;
    expect_shape(row, {kInt, kString, kInt}, "ZEDMETAX");
    dir_.metas.push_back(DirMetaRef{u32(row[0]), row[1].text, row[2].number});
  }

  void dir_row(const std::vector<Token>& row) {
    using enum Tok;
    expect_shape(row, {kInt, kString, kInt, kInt, kHex, kHex, kHex, kHex, kInt}, "ZEDIRX");
    DirEntry e;
    e.seq_id = u32(row[0]);
    if (last_seq_ && e.seq_id <= *last_seq_) {
      throw ParseError("ZEDIRX seq id " + row[0].text + " out of order (previous " +
                           std::to_string(*last_seq_) + ")",
                       row[0].line, row[0].column);
    }
    last_seq_ = e.seq_id;
    try {
      e.type_tag = TypeTag(row[1].text);
    } catch (const Error&) {
      throw ParseError("bad record type '" + row[1].text + "'", row[1].line, row[1].column);
    }
    e.run = u32(row[2]);
    e.event = u32(row[3]);
    for (int w = 0; w < 4; ++w) e.flags.words[w] = static_cast<std::uint32_t>(row[4 + w].number);
    e.offset = row[8].number;
    dir_.entries.push_back(e);
  }

  Lexer lex_;
  Token tok_;
  EventDirectory dir_;
  std::optional<std::uint32_t> last_seq_;
};

}  // namespace

std::string serialize_directory(const EventDirectory& dir) {
  std::string out;
  char buf[256];

  out += "TABLE 10\n";
  out += " /* ZEDFILEX (ID, Name(4), Options) */\n";
  for (const DirFileRef& f : dir.files) {
    out += " " + std::to_string(f.id) + ", " + quote(f.name) + ", '' , '' , '' , \n";
    out += "    " + quote(f.options) + ";\n";
  }
  out += " END TABLE\n\n";

  out += " TABLE 11\n";
  out += " /* ZEDMETAX (ID, Name, OFF) */\n";
  for (const DirMetaRef& m : dir.metas) {
    std::snprintf(buf, sizeof buf, " %" PRIu32 ", %-13s,%6" PRIu64 ";\n", m.id,
                  quote(m.name).c_str(), m.offset);
    out += buf;
  }
  out += " END TABLE\n\n";

  out += " TABLE 12\n";
  out += " /* ZEDIRX (ID, GAFTyp, Nr1, Nr2, TStam11, TStam12, TStam21, TStam22, OFF) */\n";
  for (const DirEntry& e : dir.entries) {
    std::snprintf(buf, sizeof buf,
                  "%5" PRIu32 ", %s, %5" PRIu32 ", %4" PRIu32
                  ", X'%08" PRIX32 "', X'%08" PRIX32 "', X'%08" PRIX32 "', X'%08" PRIX32
                  "', %" PRIu64 ";\n",
                  e.seq_id, quote(e.type_tag.trimmed()).c_str(), e.run, e.event,
                  e.flags.words[0], e.flags.words[1], e.flags.words[2], e.flags.words[3],
                  e.offset);
    out += buf;
  }
  out += " END TABLE\n";
  return out;
}

EventDirectory parse_directory(std::string_view text) { return Parser(text).parse(); }

}  // namespace evidx
