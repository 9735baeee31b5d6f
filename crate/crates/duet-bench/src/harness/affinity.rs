//! CPU affinity control via `sched_setaffinity`.

use std::io;
use std::mem;

fn cpu_set(cpu: usize) -> libc::cpu_set_t {
    let mut set: libc::cpu_set_t = unsafe { mem::zeroed() };
    unsafe {
        libc::CPU_ZERO(&mut set);
        libc::CPU_SET(cpu, &mut set);
    }
    set
}

fn set_affinity(pid: libc::pid_t, cpu: usize) -> io::Result<()> {
    let set = cpu_set(cpu);
    let rc = unsafe { libc::sched_setaffinity(pid, mem::size_of::<libc::cpu_set_t>(), &set) };
    if rc == 0 {
        Ok(())
    } else {
        Err(io::Error::last_os_error())
    }
}

/// Pins the calling process to a single logical CPU.
pub fn pin_self(cpu: usize) -> io::Result<()> {
    set_affinity(0, cpu)
}

/// Pins another process to a single logical CPU.
pub fn pin_pid(pid: u32, cpu: usize) -> io::Result<()> {
    set_affinity(pid as libc::pid_t, cpu)
}

/// The calling process's affinity mask, truncated to the first 64 CPUs.
pub fn current_mask() -> io::Result<u64> {
    let mut set: libc::cpu_set_t = unsafe { mem::zeroed() };
    let rc = unsafe { libc::sched_getaffinity(0, mem::size_of::<libc::cpu_set_t>(), &mut set) };
    if rc != 0 {
        return Err(io::Error::last_os_error());
    }
    let mut mask = 0u64;
    for cpu in 0..64 {
        if unsafe { libc::CPU_ISSET(cpu, &set) } {
            mask |= 1 << cpu;
        }
    }
    Ok(mask)
}

/// Logical CPUs this process may run on (first 64), in ascending order.
pub fn available_cpus() -> Vec<usize> {
    match current_mask() {
        Ok(mask) => (0..64).filter(|c| mask & (1 << c) != 0).collect(),
        Err(_) => {
            let n = std::thread::available_parallelism().map_or(1, |n| n.get());
            (0..n.min(64)).collect()
        }
    }
}
