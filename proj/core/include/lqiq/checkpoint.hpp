#ifndef LQIQ_CHECKPOINT_HPP_
#define LQIQ_CHECKPOINT_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace lqiq {

// One named array in a checkpoint file.
struct NamedArray {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;

  friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

inline constexpr char kCheckpointMagic[4] = {'L', 'Q', 'I', 'Q'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (all integers little-endian):
//   "LQIQ" | version u32 | count u32
//   per array: name_len u16 | name bytes | rank u8 | dims u32 * rank |
//              values f32 * prod(dims)
void save_checkpoint(const std::filesystem::path& path,
                     std::span<const NamedArray> arrays);
std::vector<NamedArray> load_checkpoint(const std::filesystem::path& path);

// In-memory forms of the same encoding.
std::vector<std::uint8_t> encode_checkpoint(std::span<const NamedArray> arrays);
std::vector<NamedArray> decode_checkpoint(std::span<const std::uint8_t> bytes);

// Linear lookup; throws ContractError when absent.
const NamedArray& find_array(std::span<const NamedArray> arrays,
                             const std::string& name);

}  // namespace lqiq

#endif  // LQIQ_CHECKPOINT_HPP_
