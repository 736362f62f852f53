use xtask::Worker;

/// Fibonacci with two child tasks per node while `n >= cutoff`.
pub fn fib(w: &Worker<'_>, n: u32, cutoff: u32) -> u64 {
    if n < 2 {
        return n as u64;
    }
    if n < cutoff {
        return fib_serial(n);
    }
    let (mut x, mut y) = (0, 0);
    w.scope(|s| {
        s.spawn(|w| x = fib(w, n - 1, cutoff));
        s.spawn(|w| y = fib(w, n - 2, cutoff));
    });
    x + y
}

fn fib_serial(n: u32) -> u64 {
    if n < 2 {
        n as u64
    } else {
        fib_serial(n - 1) + fib_serial(n - 2)
    }
}
