#include "test_support.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <boost/asio.hpp>
#include <boost/beast.hpp>

namespace evalverse::testing {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

TempDir::TempDir() {
  auto tmpl = (std::filesystem::temp_directory_path() / "evalverse-test-XXXXXX").string();
  if (mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
  path_ = tmpl;
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

std::filesystem::path data_dir() { return EVALVERSE_TEST_DATA_DIR; }
std::filesystem::path published_path() { return data_dir() / "published.json"; }
std::filesystem::path fake_runner_path() { return EVALVERSE_FAKE_RUNNER; }

void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  out << content;
  if (!out) throw std::runtime_error("cannot write " + p.string());
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ScoreRecord random_record(std::mt19937_64& rng) {
  static const std::vector<Benchmark> kinds = {Benchmark::arc,      Benchmark::hellaswag,
                                               Benchmark::mmlu,     Benchmark::truthfulqa,
                                               Benchmark::winogrande, Benchmark::gsm8k,
                                               Benchmark::mt_bench, Benchmark::eq_bench,
                                               Benchmark::ifeval};
  static const std::vector<std::string> models = {
      "upstage/SOLAR-10.7B-Instruct-v1.0", "Solar 10.7B Instruct", "/models/local llama",
      "mistralai/Mistral-7B-Instruct-v0.2", "Qwen 1.5 72B Chat", "ünïcode/模型", "a%b/c?d"};
  std::uniform_int_distribution<std::size_t> pick_b(0, kinds.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_m(0, models.size() - 1);
  std::uniform_int_distribution<std::int64_t> count(1, 20000);
  std::uniform_int_distribution<int> fewshot(0, kMaxFewshot);
  std::uniform_int_distribution<int> coin(0, 1);
  std::uniform_int_distribution<std::int64_t> micros(0, 4'000'000'000'000'000LL);

  ScoreRecord r;
  r.model = models[pick_m(rng)];
  r.benchmark = kinds[pick_b(rng)];
  const auto scale = score_scale(r.benchmark);
  r.score = std::uniform_real_distribution<double>(scale.min, scale.max)(rng);
  r.sample_count = count(rng);
  const int subs = std::uniform_int_distribution<int>(0, 3)(rng);
  for (int i = 0; i < subs; ++i) {
    r.subscores["sub_" + std::to_string(i)] = std::uniform_real_distribution<double>(0, 100)(rng);
  }
  r.settings.engine = coin(rng) ? Engine::hf : Engine::vllm;
  r.settings.dtype = coin(rng) ? Dtype::float16 : Dtype::int8;
  r.settings.num_fewshot = fewshot(rng);
  r.job_id = "job-" + std::to_string(std::uniform_int_distribution<std::uint64_t>()(rng));
  r.created_at = Timestamp(std::chrono::microseconds(micros(rng)));
  return r;
}

HttpResult http_request(unsigned short port, const std::string& method, const std::string& target,
                        const std::string& body) {
  asio::io_context ioc;
  beast::tcp_stream stream(ioc);
  stream.connect(tcp::endpoint(asio::ip::make_address("127.0.0.1"), port));
  http::request<http::string_body> req(http::string_to_verb(method), target, 11);
  req.set(http::field::host, "127.0.0.1");
  req.set(http::field::content_type, "application/json");
  req.body() = body;
  req.prepare_payload();
  http::write(stream, req);
  beast::flat_buffer buffer;
  http::response<http::string_body> res;
  http::read(stream, buffer, res);
  beast::error_code ec;
  stream.socket().shutdown(tcp::socket::shutdown_both, ec);
  return {res.result_int(), res.body()};
}

struct WsClient::Impl {
  asio::io_context ioc;
  websocket::stream<beast::tcp_stream> ws{ioc};
  beast::flat_buffer buffer;
};

WsClient::WsClient(unsigned short port, const std::string& target) : impl_(std::make_unique<Impl>()) {
  beast::get_lowest_layer(impl_->ws).connect(tcp::endpoint(asio::ip::make_address("127.0.0.1"), port));
  impl_->ws.handshake("127.0.0.1:" + std::to_string(port), target);
}

WsClient::~WsClient() {
  beast::error_code ec;
  beast::get_lowest_layer(impl_->ws).socket().close(ec);
}

void WsClient::send(const std::string& text) {
  impl_->ws.text(true);
  impl_->ws.write(asio::buffer(text));
}

std::optional<std::string> WsClient::read(std::chrono::milliseconds timeout) {
  bool done = false;
  beast::error_code result;
  impl_->ws.async_read(impl_->buffer, [&](beast::error_code ec, std::size_t) {
    done = true;
    result = ec;
  });
  impl_->ioc.restart();
  impl_->ioc.run_for(timeout);
  if (!done) {
    beast::get_lowest_layer(impl_->ws).cancel();
    impl_->ioc.restart();
    impl_->ioc.run();
    return std::nullopt;
  }
  if (result) return std::nullopt;
  auto text = beast::buffers_to_string(impl_->buffer.data());
  impl_->buffer.consume(impl_->buffer.size());
  return text;
}

}  // namespace evalverse::testing
