//! C interface: opaque handles for keys, blocks and stores, plus experiment
//! runs. Every fallible call returns a [`BwStatus`]; the message for the
//! last failure on the calling thread is available from
//! [`bw_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use blockweb::experiment::{self, ExperimentError, Params};
use blockweb::store::BlockStore;
use blockweb::{Block, Canonical, Hash, Keypair};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BwStatus {
    BwOk = 0,
    BwErrNull = 1,
    BwErrDecode = 2,
    BwErrBufferTooSmall = 3,
    BwErrUnknownExperiment = 4,
    BwErrInvalidArgument = 5,
    BwErrFailed = 6,
    BwErrPanic = 7,
}

/// Signing key.
pub struct BwKeypair(Keypair);
/// Immutable block.
pub struct BwBlock(Block);
/// In-memory block store.
pub struct BwStore(BlockStore);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: BwStatus, message: impl Into<String>) -> BwStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = message.into());
    status
}

fn guard(f: impl FnOnce() -> BwStatus) -> BwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(BwStatus::BwErrPanic, "internal panic"),
    }
}

/// Copies `bytes` out, or reports the needed size through `out_len`.
unsafe fn copy_out(bytes: &[u8], out: *mut u8, capacity: usize, out_len: *mut usize) -> BwStatus {
    if out_len.is_null() {
        return fail(BwStatus::BwErrNull, "out_len is null");
    }
    *out_len = bytes.len();
    if bytes.len() > capacity {
        return fail(BwStatus::BwErrBufferTooSmall, format!("{} bytes needed", bytes.len()));
    }
    if !bytes.is_empty() {
        if out.is_null() {
            return fail(BwStatus::BwErrNull, "output buffer is null");
        }
        ptr::copy_nonoverlapping(bytes.as_ptr(), out, bytes.len());
    }
    BwStatus::BwOk
}

unsafe fn slice<'a>(data: *const u8, len: usize) -> Option<&'a [u8]> {
    match (data.is_null(), len) {
        (_, 0) => Some(&[]),
        (true, _) => None,
        (false, _) => Some(std::slice::from_raw_parts(data, len)),
    }
}

/// Length of the last error message on this thread, copying it NUL
/// terminated into `buf` when `capacity` allows.
///
/// # Safety
/// `buf` must be null or valid for `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn bw_last_error(buf: *mut c_char, capacity: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && capacity > e.len() {
            ptr::copy_nonoverlapping(e.as_ptr(), buf as *mut u8, e.len());
            *buf.add(e.len()) = 0;
        }
        e.len()
    })
}

/// Keypair from a 32-byte seed. Returns null if `seed` is null.
///
/// # Safety
/// `seed` must be null or point to 32 readable bytes.
#[no_mangle]
pub unsafe extern "C" fn bw_keypair_from_seed(seed: *const u8) -> *mut BwKeypair {
    if seed.is_null() {
        fail(BwStatus::BwErrNull, "seed is null");
        return ptr::null_mut();
    }
    let mut s = [0u8; 32];
    ptr::copy_nonoverlapping(seed, s.as_mut_ptr(), 32);
    Box::into_raw(Box::new(BwKeypair(Keypair::from_seed(s))))
}

/// Writes the 32-byte public key.
///
/// # Safety
/// `key` must come from `bw_keypair_from_seed`; `out` must hold 32 bytes.
#[no_mangle]
pub unsafe extern "C" fn bw_keypair_id(key: *const BwKeypair, out: *mut u8) -> BwStatus {
    if key.is_null() || out.is_null() {
        return fail(BwStatus::BwErrNull, "null argument");
    }
    let hex = (*key).0.id().to_hex();
    for i in 0..32 {
        *out.add(i) = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).expect("id hex");
    }
    BwStatus::BwOk
}

/// # Safety
/// `key` must be null or come from `bw_keypair_from_seed`, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bw_keypair_free(key: *mut BwKeypair) {
    if !key.is_null() {
        drop(Box::from_raw(key));
    }
}

/// New data block with no references.
///
/// # Safety
/// `payload` must be valid for `len` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bw_block_data(payload: *const u8, len: usize, out: *mut *mut BwBlock) -> BwStatus {
    guard(|| {
        let Some(bytes) = slice(payload, len) else {
            return fail(BwStatus::BwErrNull, "payload is null");
        };
        if out.is_null() {
            return fail(BwStatus::BwErrNull, "out is null");
        }
        *out = Box::into_raw(Box::new(BwBlock(Block::data(bytes.to_vec(), vec![]))));
        BwStatus::BwOk
    })
}

/// Parses a canonically encoded block.
///
/// # Safety
/// `data` must be valid for `len` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bw_block_decode(data: *const u8, len: usize, out: *mut *mut BwBlock) -> BwStatus {
    guard(|| {
        let Some(bytes) = slice(data, len) else {
            return fail(BwStatus::BwErrNull, "data is null");
        };
        if out.is_null() {
            return fail(BwStatus::BwErrNull, "out is null");
        }
        match Block::from_canonical_bytes(bytes.to_vec()) {
            Ok(b) => {
                *out = Box::into_raw(Box::new(BwBlock(b)));
                BwStatus::BwOk
            }
            Err(e) => fail(BwStatus::BwErrDecode, e.to_string()),
        }
    })
}

/// Canonical encoding. Sets `out_len` to the encoded size even when the
/// buffer is too small.
///
/// # Safety
/// `block` must be a live handle; `out` valid for `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn bw_block_encode(block: *const BwBlock, out: *mut u8, capacity: usize, out_len: *mut usize) -> BwStatus {
    if block.is_null() {
        return fail(BwStatus::BwErrNull, "block is null");
    }
    copy_out(&(*block).0.to_canonical_bytes(), out, capacity, out_len)
}

/// Writes the 32-byte block hash.
///
/// # Safety
/// `block` must be a live handle; `out` must hold 32 bytes.
#[no_mangle]
pub unsafe extern "C" fn bw_block_hash(block: *const BwBlock, out: *mut u8) -> BwStatus {
    if block.is_null() || out.is_null() {
        return fail(BwStatus::BwErrNull, "null argument");
    }
    ptr::copy_nonoverlapping((*block).0.hash().digest.as_ptr(), out, 32);
    BwStatus::BwOk
}

/// Wire tag of the block's kind, or 0 for a null handle.
///
/// # Safety
/// `block` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bw_block_kind(block: *const BwBlock) -> u8 {
    if block.is_null() {
        return 0;
    }
    (*block).0.kind() as u8
}

/// # Safety
/// `block` must be null or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bw_block_free(block: *mut BwBlock) {
    if !block.is_null() {
        drop(Box::from_raw(block));
    }
}

#[no_mangle]
pub extern "C" fn bw_store_new() -> *mut BwStore {
    Box::into_raw(Box::new(BwStore(BlockStore::new())))
}

/// Stores a copy of `block`; `out_hash` (32 bytes, may be null) receives its hash.
///
/// # Safety
/// `store` and `block` must be live handles.
#[no_mangle]
pub unsafe extern "C" fn bw_store_insert(store: *const BwStore, block: *const BwBlock, out_hash: *mut u8) -> BwStatus {
    if store.is_null() || block.is_null() {
        return fail(BwStatus::BwErrNull, "null argument");
    }
    match (*store).0.insert((*block).0.clone()) {
        Ok((h, _)) => {
            if !out_hash.is_null() {
                ptr::copy_nonoverlapping(h.digest.as_ptr(), out_hash, 32);
            }
            BwStatus::BwOk
        }
        Err(e) => fail(BwStatus::BwErrFailed, e.to_string()),
    }
}

/// 1 if the store holds the block with this hash, 0 if not, -1 on a null argument.
///
/// # Safety
/// `store` must be a live handle; `hash` must hold 32 bytes.
#[no_mangle]
pub unsafe extern "C" fn bw_store_contains(store: *const BwStore, hash: *const u8) -> i32 {
    if store.is_null() || hash.is_null() {
        fail(BwStatus::BwErrNull, "null argument");
        return -1;
    }
    let mut digest = [0u8; 32];
    ptr::copy_nonoverlapping(hash, digest.as_mut_ptr(), 32);
    (*store).0.contains(&Hash::from_digest(digest)) as i32
}

/// Fetches a copy of a stored block into `out`; `BwErrInvalidArgument` if absent.
///
/// # Safety
/// `store` must be a live handle; `hash` must hold 32 bytes; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bw_store_get(store: *const BwStore, hash: *const u8, out: *mut *mut BwBlock) -> BwStatus {
    if store.is_null() || hash.is_null() || out.is_null() {
        return fail(BwStatus::BwErrNull, "null argument");
    }
    let mut digest = [0u8; 32];
    ptr::copy_nonoverlapping(hash, digest.as_mut_ptr(), 32);
    match (*store).0.get(&Hash::from_digest(digest)) {
        Some(b) => {
            *out = Box::into_raw(Box::new(BwBlock(b)));
            BwStatus::BwOk
        }
        None => fail(BwStatus::BwErrInvalidArgument, "no such block"),
    }
}

/// # Safety
/// `store` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn bw_store_len(store: *const BwStore) -> usize {
    if store.is_null() {
        return 0;
    }
    (*store).0.len()
}

/// # Safety
/// `store` must be null or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bw_store_free(store: *mut BwStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Runs a simulated experiment and writes its metrics text. `params` holds
/// newline-separated `key=value` lines and may be null.
///
/// # Safety
/// `name` and `params` must be null or NUL-terminated; `out` valid for
/// `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn bw_experiment_run(
    name: *const c_char,
    params: *const c_char,
    seed: u64,
    out: *mut u8,
    capacity: usize,
    out_len: *mut usize,
) -> BwStatus {
    guard(|| {
        if name.is_null() {
            return fail(BwStatus::BwErrNull, "name is null");
        }
        let Ok(name) = CStr::from_ptr(name).to_str() else {
            return fail(BwStatus::BwErrInvalidArgument, "name is not UTF-8");
        };
        let text = if params.is_null() {
            ""
        } else {
            match CStr::from_ptr(params).to_str() {
                Ok(t) => t,
                Err(_) => return fail(BwStatus::BwErrInvalidArgument, "params are not UTF-8"),
            }
        };
        let parsed = match Params::parse(text.lines().map(str::trim).filter(|l| !l.is_empty())) {
            Ok(p) => p,
            Err(e) => return fail(BwStatus::BwErrInvalidArgument, e.to_string()),
        };
        match experiment::run(name, &parsed, seed) {
            Ok(m) => copy_out(m.render().as_bytes(), out, capacity, out_len),
            Err(e @ ExperimentError::Unknown(_)) => fail(BwStatus::BwErrUnknownExperiment, e.to_string()),
            Err(e @ ExperimentError::Param { .. }) => fail(BwStatus::BwErrInvalidArgument, e.to_string()),
            Err(e) => fail(BwStatus::BwErrFailed, e.to_string()),
        }
    })
}
