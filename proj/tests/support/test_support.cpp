#include "test_support.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <unistd.h>

namespace opforge::testkit {

std::filesystem::path fixture_path(const std::string& relative) {
  return std::filesystem::path(OPFORGE_FIXTURE_DIR) / relative;
}

std::string read_fixture(const std::string& relative) {
  std::ifstream in(fixture_path(relative), std::ios::binary);
  if (!in) throw std::runtime_error("missing fixture " + relative);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          ("opforge-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

std::string Gen::ident(int max_len) {
  static constexpr char kFirst[] = "abcdefghijklmnopqrstuvwxyz_";
  static constexpr char kRest[] = "abcdefghijklmnopqrstuvwxyz_0123456789";
  std::string s(1, kFirst[range(0, sizeof(kFirst) - 2)]);
  const int n = range(0, max_len - 1);
  for (int i = 0; i < n; ++i) s += kRest[range(0, sizeof(kRest) - 2)];
  return s;
}

std::string Gen::text(int max_len) {
  std::string s;
  const int n = range(0, max_len);
  for (int i = 0; i < n; ++i) {
    const int pick = range(0, 9);
    if (pick == 0) {
      s += static_cast<char>(range(0, 31));
    } else if (pick == 1) {
      s += "\xc3\xa9";
    } else {
      s += static_cast<char>(range(32, 126));
    }
  }
  return s;
}

namespace {

namespace t = opforge::testing;
namespace p = opforge::protocol;

double any_double(Gen& gen) {
  switch (gen.range(0, 9)) {
    case 0: return std::numeric_limits<double>::quiet_NaN();
    case 1: return gen.coin() ? std::numeric_limits<double>::infinity()
                              : -std::numeric_limits<double>::infinity();
    case 2: return gen.coin() ? 0.0 : -0.0;
    case 3: return std::ldexp(gen.real(-1, 1), gen.range(-1070, 1020));
    default: return gen.real(-1e6, 1e6);
  }
}

Dtype any_dtype(Gen& gen) { return kAllDtypes[static_cast<std::size_t>(gen.range(0, 4))]; }

t::Shape any_shape(Gen& gen, int max_numel) {
  t::Shape shape;
  int numel = 1;
  const int rank = gen.range(0, 3);
  for (int i = 0; i < rank; ++i) {
    const int d = gen.range(0, std::max(1, max_numel / numel));
    shape.push_back(d);
    numel *= std::max(d, 1);
  }
  return shape;
}

t::TensorLiteral any_tensor(Gen& gen) {
  t::TensorLiteral tensor;
  tensor.dtype = any_dtype(gen);
  tensor.shape = any_shape(gen, 12);
  std::size_t numel = 1;
  for (auto d : tensor.shape) numel *= static_cast<std::size_t>(d);
  if (gen.coin()) {
    if (is_floating(tensor.dtype)) {
      std::vector<double> v;
      for (std::size_t i = 0; i < numel; ++i) v.push_back(any_double(gen));
      tensor.data = t::TensorValues(std::move(v));
    } else {
      std::vector<std::int64_t> v;
      for (std::size_t i = 0; i < numel; ++i) v.push_back(static_cast<std::int64_t>(gen.u64()));
      tensor.data = t::TensorValues(std::move(v));
    }
  } else {
    t::RandomDescriptor r;
    r.seed = gen.u64();
    r.distribution = gen.coin() ? "uniform" : gen.ident();
    r.low = gen.real(-10, 0);
    r.high = gen.real(0, 10);
    tensor.data = r;
  }
  return tensor;
}

nlohmann::json any_scalar(Gen& gen) {
  switch (gen.range(0, 4)) {
    case 0: return gen.range(-1000, 1000);
    case 1: return gen.real(-100, 100);
    case 2: return gen.coin();
    case 3: return nullptr;
    default: return gen.text(10);
  }
}

t::TestCase any_case(Gen& gen) {
  t::TestCase c;
  c.case_id = gen.text(16);
  c.dtype = any_dtype(gen);
  const int tensors = gen.range(0, 3);
  for (int i = 0; i < tensors; ++i) c.input_tensors.push_back(any_tensor(gen));
  const int args = gen.range(0, 3);
  for (int i = 0; i < args; ++i) c.input_args.push_back(any_scalar(gen));
  const int kwargs = gen.range(0, 2);
  for (int i = 0; i < kwargs; ++i) c.input_kwargs[gen.ident()] = any_scalar(gen);
  c.source = gen.coin() ? t::TestSource::kCaptured : t::TestSource::kOpInfoStyle;
  return c;
}

t::TolerancePolicy any_policy(Gen& gen) {
  t::TolerancePolicy policy;
  for (Dtype d : {Dtype::kFloat32, Dtype::kFloat16, Dtype::kBfloat16}) {
    if (gen.coin(0.7)) policy.floats[d] = {gen.real(0, 0.1), gen.real(0, 0.1)};
  }
  policy.nan_equal = gen.coin();
  return policy;
}

t::TensorSummary any_summary(Gen& gen) {
  std::vector<double> values;
  const int n = gen.range(0, 40);
  for (int i = 0; i < n; ++i) values.push_back(any_double(gen));
  return t::summarize_tensor(values, any_dtype(gen), {n});
}

}  // namespace

protocol::Message random_message(Gen& gen) {
  p::Message m;
  m.id = gen.coin(0.1) ? std::numeric_limits<std::uint64_t>::max() : gen.u64() >> gen.range(0, 63);
  switch (gen.range(0, 10)) {
    case 0: m.body = p::Capabilities{}; break;
    case 1: m.body = p::LoadCandidate{gen.text(200)}; break;
    case 2: m.body = p::RunTest{any_case(gen), any_policy(gen)}; break;
    case 3: m.body = p::Shutdown{}; break;
    case 4: {
      p::CapabilitiesOk ok;
      ok.backend = static_cast<p::Backend>(gen.range(0, 2));
      for (Dtype d : kAllDtypes) {
        if (gen.coin()) ok.dtypes.insert(d);
      }
      m.body = ok;
      break;
    }
    case 5: m.body = p::LoadOk{}; break;
    case 6: m.body = p::CompileError{gen.text(400)}; break;
    case 7: m.body = p::TestPassed{gen.text(12)}; break;
    case 8: {
      p::TestFailed f;
      f.case_id = gen.text(12);
      f.payload.cpu_summary = any_summary(gen);
      f.payload.device_summary = any_summary(gen);
      f.payload.input_signature = gen.text(30);
      f.payload.output_signature = gen.text(10);
      f.payload.input_shape = any_shape(gen, 1000);
      f.payload.input_tensor_excerpt = gen.text(60);
      f.payload.input_args = gen.text(20);
      f.payload.input_kwargs = gen.text(20);
      m.body = f;
      break;
    }
    case 9: {
      p::RuntimeCrash c;
      c.case_id = gen.text(12);
      c.report.crash_kind = gen.ident();
      const int frames = gen.range(0, 4);
      for (int i = 0; i < frames; ++i) c.report.backtrace_frames.push_back({gen.ident(), gen.text(20)});
      if (gen.coin()) c.report.register_summary = gen.text(40);
      c.report.set_excerpt(gen.text(100));
      m.body = c;
      break;
    }
    default: m.body = p::ProtocolError{gen.text(50)}; break;
  }
  return m;
}

}  // namespace opforge::testkit
