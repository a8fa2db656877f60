#include "tsuae/persistence.hpp"

#include <charconv>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace tsuae::cli {

namespace {

constexpr const char* magic = "tsuae-model";

std::uint64_t fnv1a(std::string_view bytes)
{
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex(double v)
{
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::hex);
  return std::string(buf, ptr);
}

double parse_hex(const std::string& token)
{
  double v = 0;
  const char* first = token.data();
  const char* last = first + token.size();
  bool negative = false;
  // from_chars rejects a leading '+', but accepts '-'; hex mode has no "0x"
  if (first != last && *first == '-') {
    negative = true;
    ++first;
  }
  auto [ptr, ec] = std::from_chars(first, last, v, std::chars_format::hex);
  if (ec != std::errc() || ptr != last)
    throw IoError("model file: malformed number '" + token + "'");
  return negative ? -v : v;
}

// names may contain any byte except line breaks; whitespace and '%' are
// percent-encoded so that each record stays one whitespace-separated line
std::string encode_name(const std::string& s)
{
  std::string out;
  for (unsigned char c : s) {
    if (c <= ' ' || c == '%' || c == 0x7f) {
      char buf[4];
      std::snprintf(buf, sizeof buf, "%%%02X", c);
      out += buf;
    } else {
      out += static_cast<char>(c);
    }
  }
  return out.empty() ? "%" : out;
}

std::string decode_name(const std::string& s)
{
  if (s == "%")
    return {};
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '%' && i + 2 < s.size()) {
      out += static_cast<char>(std::stoi(s.substr(i + 1, 2), nullptr, 16));
      i += 2;
    } else {
      out += s[i];
    }
  }
  return out;
}

class Reader
{
public:
  explicit Reader(const std::string& body)
    : in_(body)
  {}

  std::string word(const char* what)
  {
    std::string w;
    if (!(in_ >> w))
      throw IoError(std::string("model file: unexpected end while reading ") + what);
    return w;
  }

  void expect(const std::string& keyword)
  {
    const auto w = word(keyword.c_str());
    if (w != keyword)
      throw IoError("model file: expected '" + keyword + "', found '" + w + "'");
  }

  long long integer(const char* what)
  {
    const auto w = word(what);
    long long v = 0;
    auto [ptr, ec] = std::from_chars(w.data(), w.data() + w.size(), v);
    if (ec != std::errc() || ptr != w.data() + w.size())
      throw IoError(std::string("model file: malformed ") + what + " '" + w + "'");
    return v;
  }

  double number(const char* what) { return parse_hex(word(what)); }

  std::optional<double> optional_number(const char* what)
  {
    const auto w = word(what);
    if (w == "none")
      return std::nullopt;
    return parse_hex(w);
  }

private:
  std::istringstream in_;
};

} // namespace

std::string serialize_model(const SavedModel& model)
{
  const auto& a = model.archive;
  const auto& sc = model.scaler;
  if (model.roles.size() != sc.names.size() ||
      static_cast<std::size_t>(sc.mean.size()) != sc.names.size() ||
      static_cast<std::size_t>(sc.stddev.size()) != sc.names.size())
    throw ContractError("serialize_model: scaler names, roles and statistics disagree");

  std::ostringstream os;
  os << magic << ' ' << model_format_version << '\n';
  os << "method " << encode_name(a.method) << '\n';
  os << "scalars " << a.scalars.size() << '\n';
  for (const auto& [name, v] : a.scalars)
    os << encode_name(name) << ' ' << hex(v) << '\n';
  os << "matrices " << a.matrices.size() << '\n';
  for (const auto& [name, m] : a.matrices) {
    os << encode_name(name) << ' ' << m.rows() << ' ' << m.cols() << '\n';
    for (Index r = 0; r < m.rows(); ++r) {
      for (Index c = 0; c < m.cols(); ++c)
        os << (c ? " " : "") << hex(m(r, c));
      os << '\n';
    }
  }
  os << "scaler " << sc.names.size() << '\n';
  for (std::size_t j = 0; j < sc.names.size(); ++j)
    os << encode_name(sc.names[j]) << ' ' << data::to_string(model.roles[j]) << ' '
       << hex(sc.mean[static_cast<Index>(j)]) << ' ' << hex(sc.stddev[static_cast<Index>(j)])
       << '\n';
  auto opt = [](const std::optional<double>& v) { return v ? hex(*v) : std::string("none"); };
  os << "thresholds " << opt(model.thresholds.process) << ' ' << opt(model.thresholds.quality)
     << ' ' << hex(model.thresholds.confidence) << '\n';
  os << "end\n";

  std::string body = os.str();
  std::ostringstream sum;
  sum << "checksum " << std::hex << std::setw(16) << std::setfill('0') << fnv1a(body) << '\n';
  return body + sum.str();
}

SavedModel deserialize_model(const std::string& text)
{
  // the checksum line is the last line; anything missing means truncation
  const std::string key = "checksum ";
  const auto pos = text.rfind(key);
  if (pos == std::string::npos || (pos != 0 && text[pos - 1] != '\n'))
    throw ChecksumError("model file: checksum line missing (file truncated?)");
  const std::string body = text.substr(0, pos);
  std::string stored = text.substr(pos + key.size());
  while (!stored.empty() && (stored.back() == '\n' || stored.back() == '\r'))
    stored.pop_back();
  std::ostringstream expected;
  expected << std::hex << std::setw(16) << std::setfill('0') << fnv1a(body);
  if (stored != expected.str())
    throw ChecksumError("model file: checksum mismatch (stored " + stored + ", computed " +
                        expected.str() + ")");

  Reader in(body);
  if (in.word("header") != magic)
    throw IoError("model file: not a model file");
  const auto version = in.integer("format version");
  if (version != model_format_version)
    throw UnsupportedVersionError("model file: unsupported format version " +
                                  std::to_string(version) + " (this build reads version " +
                                  std::to_string(model_format_version) + ")");

  SavedModel m;
  in.expect("method");
  m.archive.method = decode_name(in.word("method"));
  in.expect("scalars");
  const auto ns = in.integer("scalar count");
  for (long long i = 0; i < ns; ++i) {
    auto name = decode_name(in.word("scalar name"));
    m.archive.scalars.emplace_back(std::move(name), in.number("scalar"));
  }
  in.expect("matrices");
  const auto nm = in.integer("matrix count");
  for (long long i = 0; i < nm; ++i) {
    auto name = decode_name(in.word("matrix name"));
    const auto rows = in.integer("rows");
    const auto cols = in.integer("cols");
    if (rows < 0 || cols < 0)
      throw IoError("model file: negative matrix dimensions for '" + name + "'");
    Matrix mat(rows, cols);
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c)
        mat(r, c) = in.number("matrix entry");
    m.archive.matrices.emplace_back(std::move(name), std::move(mat));
  }
  in.expect("scaler");
  const auto nc = in.integer("scaler size");
  m.scaler.mean.resize(nc);
  m.scaler.stddev.resize(nc);
  for (long long j = 0; j < nc; ++j) {
    m.scaler.names.push_back(decode_name(in.word("column name")));
    const auto role = in.word("role");
    if (role == "process")
      m.roles.push_back(data::Role::process);
    else if (role == "quality")
      m.roles.push_back(data::Role::quality);
    else
      throw IoError("model file: unknown column role '" + role + "'");
    m.scaler.mean[j] = in.number("mean");
    m.scaler.stddev[j] = in.number("stddev");
  }
  in.expect("thresholds");
  m.thresholds.process = in.optional_number("process threshold");
  m.thresholds.quality = in.optional_number("quality threshold");
  m.thresholds.confidence = in.number("confidence");
  in.expect("end");
  return m;
}

void save_model(const SavedModel& model, const std::filesystem::path& path)
{
  const std::string text = serialize_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError("cannot write '" + path.string() + "'");
  out << text;
  out.flush();
  if (!out)
    throw IoError("failed writing '" + path.string() + "'");
}

SavedModel load_model(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return deserialize_model(ss.str());
  } catch (const ChecksumError& e) {
    throw ChecksumError(path.string() + ": " + e.what());
  } catch (const UnsupportedVersionError& e) {
    throw UnsupportedVersionError(path.string() + ": " + e.what());
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

} // namespace tsuae::cli
