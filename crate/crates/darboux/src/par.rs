//! Scoped data-parallel helpers over index ranges.

use std::thread;

fn workers() -> usize {
    thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(16)
}

/// `(0..n).map(f).collect()` computed on scoped threads in contiguous chunks.
pub fn par_map<T: Send, F: Fn(usize) -> T + Sync>(n: usize, f: F) -> Vec<T> {
    let w = workers();
    if w <= 1 || n < 256 {
        return (0..n).map(f).collect();
    }
    let chunk = n.div_ceil(w);
    let f = &f;
    thread::scope(|s| {
        let handles: Vec<_> = (0..w)
            .map(|t| {
                let lo = (t * chunk).min(n);
                let hi = ((t + 1) * chunk).min(n);
                s.spawn(move || (lo..hi).map(f).collect::<Vec<T>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// `(0..n).map(f).collect()` with one scoped thread per item, for a handful of heavy tasks.
pub fn par_tasks<T: Send, F: Fn(usize) -> T + Sync>(n: usize, f: F) -> Vec<T> {
    if n <= 1 || workers() <= 1 {
        return (0..n).map(f).collect();
    }
    let f = &f;
    thread::scope(|s| {
        let handles: Vec<_> = (0..n).map(|i| s.spawn(move || f(i))).collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    })
}

#[cfg(test)]
mod tests {
    #[test]
    fn order_preserved() {
        let v = super::par_map(10_000, |i| i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == 2 * i));
    }

    #[test]
    fn tasks_keep_order() {
        let v = super::par_tasks(5, |i| i * i);
        assert_eq!(v, vec![0, 1, 4, 9, 16]);
    }
}
