#ifndef BLOCKWEB_H
#define BLOCKWEB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BwStatus {
  BW_OK = 0,
  BW_ERR_NULL = 1,
  BW_ERR_DECODE = 2,
  BW_ERR_BUFFER_TOO_SMALL = 3,
  BW_ERR_UNKNOWN_EXPERIMENT = 4,
  BW_ERR_INVALID_ARGUMENT = 5,
  BW_ERR_FAILED = 6,
  BW_ERR_PANIC = 7,
} BwStatus;

/**
 * Immutable block.
 */
typedef struct BwBlock BwBlock;

/**
 * Signing key.
 */
typedef struct BwKeypair BwKeypair;

/**
 * In-memory block store.
 */
typedef struct BwStore BwStore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Length of the last error message on this thread, copying it NUL
 * terminated into `buf` when `capacity` allows.
 *
 * # Safety
 * `buf` must be null or valid for `capacity` bytes.
 */
size_t bw_last_error(char *buf, size_t capacity);

/**
 * Keypair from a 32-byte seed. Returns null if `seed` is null.
 *
 * # Safety
 * `seed` must be null or point to 32 readable bytes.
 */
struct BwKeypair *bw_keypair_from_seed(const uint8_t *seed);

/**
 * Writes the 32-byte public key.
 *
 * # Safety
 * `key` must come from `bw_keypair_from_seed`; `out` must hold 32 bytes.
 */
enum BwStatus bw_keypair_id(const struct BwKeypair *key, uint8_t *out);

/**
 * # Safety
 * `key` must be null or come from `bw_keypair_from_seed`, and not be used afterwards.
 */
void bw_keypair_free(struct BwKeypair *key);

/**
 * New data block with no references.
 *
 * # Safety
 * `payload` must be valid for `len` bytes; `out` must be writable.
 */
enum BwStatus bw_block_data(const uint8_t *payload, size_t len, struct BwBlock **out);

/**
 * Parses a canonically encoded block.
 *
 * # Safety
 * `data` must be valid for `len` bytes; `out` must be writable.
 */
enum BwStatus bw_block_decode(const uint8_t *data, size_t len, struct BwBlock **out);

/**
 * Canonical encoding. Sets `out_len` to the encoded size even when the
 * buffer is too small.
 *
 * # Safety
 * `block` must be a live handle; `out` valid for `capacity` bytes.
 */
enum BwStatus bw_block_encode(const struct BwBlock *block,
                              uint8_t *out,
                              size_t capacity,
                              size_t *out_len);

/**
 * Writes the 32-byte block hash.
 *
 * # Safety
 * `block` must be a live handle; `out` must hold 32 bytes.
 */
enum BwStatus bw_block_hash(const struct BwBlock *block, uint8_t *out);

/**
 * Wire tag of the block's kind, or 0 for a null handle.
 *
 * # Safety
 * `block` must be null or a live handle.
 */
uint8_t bw_block_kind(const struct BwBlock *block);

/**
 * # Safety
 * `block` must be null or a live handle, not used afterwards.
 */
void bw_block_free(struct BwBlock *block);

struct BwStore *bw_store_new(void);

/**
 * Stores a copy of `block`; `out_hash` (32 bytes, may be null) receives its hash.
 *
 * # Safety
 * `store` and `block` must be live handles.
 */
enum BwStatus bw_store_insert(const struct BwStore *store,
                              const struct BwBlock *block,
                              uint8_t *out_hash);

/**
 * 1 if the store holds the block with this hash, 0 if not, -1 on a null argument.
 *
 * # Safety
 * `store` must be a live handle; `hash` must hold 32 bytes.
 */
int32_t bw_store_contains(const struct BwStore *store, const uint8_t *hash);

/**
 * Fetches a copy of a stored block into `out`; `BwErrInvalidArgument` if absent.
 *
 * # Safety
 * `store` must be a live handle; `hash` must hold 32 bytes; `out` writable.
 */
enum BwStatus bw_store_get(const struct BwStore *store, const uint8_t *hash, struct BwBlock **out);

/**
 * # Safety
 * `store` must be a live handle.
 */
size_t bw_store_len(const struct BwStore *store);

/**
 * # Safety
 * `store` must be null or a live handle, not used afterwards.
 */
void bw_store_free(struct BwStore *store);

/**
 * Runs a simulated experiment and writes its metrics text. `params` holds
 * newline-separated `key=value` lines and may be null.
 *
 * # Safety
 * `name` and `params` must be null or NUL-terminated; `out` valid for
 * `capacity` bytes.
 */
enum BwStatus bw_experiment_run(const char *name,
                                const char *params,
                                uint64_t seed,
                                uint8_t *out,
                                size_t capacity,
                                size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BLOCKWEB_H */
