//! glibc allocator settings for training workloads.

/// Keeps freed activation buffers inside the heap. Every training step
/// frees several multi-megabyte tensors; with the default trim and mmap
/// thresholds glibc hands them back to the kernel and the next step pays
/// for zeroed pages again.
pub fn retain_freed_memory() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator tunables and locks the arena itself.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 256 << 20);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
    }
}
