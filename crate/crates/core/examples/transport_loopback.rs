//! Streams simulated array readings over a local TCP connection as wire
//! frames and reports loss and per-frame encode/decode times.

use std::net::TcpListener;
use std::thread;
use wavecopy::em::RfReading;
use wavecopy::transport::{connect_and_send, serve_once, Sampler};
use wavecopy::Complex64;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let server = thread::spawn(move || {
        let mut last = None;
        let report = serve_once(&listener, |f| last = Some(f.seq));
        (report, last)
    });
    let mut sampler = Sampler::starting_at(0);
    let frames: Vec<_> = (0..1000)
        .map(|i| {
            let data = (0..100).map(|j| Complex64::from_polar(1e-3, 0.01 * (i * 100 + j) as f64)).collect();
            sampler.sample(&RfReading::new(10, 10, data))
        })
        .collect::<Result<_, _>>()?;
    let sent = connect_and_send(addr, frames, None)?;
    let (received, last) = server.join().expect("server thread");
    let received = received?;
    println!("sent {} frames, received {} (last seq {last:?})", sent.frames, received.frames);
    println!("skipped bytes {}, corrupted {}", received.stream.skipped_bytes, received.stream.corrupted);
    println!("encode median {:.2} µs, decode median {:.2} µs", sent.encode.median_us, received.decode.median_us);
    Ok(())
}
