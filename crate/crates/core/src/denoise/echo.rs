//! Echo server: a protocol test double that returns every request tensor
//! unchanged. Backs the `denoise-serve-echo` CLI subcommand and the protocol
//! round-trip tests.

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{TcpListener, ToSocketAddrs};

use super::protocol;
use crate::error::Result;

/// Serve one duplex stream until EOF or a protocol error.
pub fn serve_stream(reader: impl Read, writer: impl Write) -> Result<()> {
    let mut reader = BufReader::new(reader);
    let mut writer = BufWriter::new(writer);
    loop {
        match protocol::read_request(&mut reader) {
            Ok((tensor, _t)) => protocol::write_response_ok(&mut writer, &tensor)?,
            Err(crate::error::Error::Io(e))
                if e.kind() == std::io::ErrorKind::UnexpectedEof =>
            {
                return Ok(()); // clean shutdown
            }
            Err(e) => {
                let _ = protocol::write_response_err(&mut writer, &e.to_string());
                return Err(e);
            }
        }
    }
}

/// Bind and serve forever, one thread per connection. Returns after binding
/// fails; otherwise loops. `on_bound` receives the actual listen address
/// (useful with port 0).
pub fn serve_tcp(addr: impl ToSocketAddrs, on_bound: impl FnOnce(std::net::SocketAddr)) -> Result<()> {
    let listener = TcpListener::bind(addr)?;
    on_bound(listener.local_addr()?);
    for stream in listener.incoming() {
        let stream = stream?;
        let peer = stream.try_clone()?;
        std::thread::spawn(move || {
            let _ = serve_stream(peer, stream);
        });
    }
    Ok(())
}

/// Serve the protocol on stdin/stdout until EOF.
pub fn serve_stdio() -> Result<()> {
    serve_stream(std::io::stdin().lock(), std::io::stdout().lock())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoise::external::{Endpoint, ExternalDenoiser, ExternalDenoiserConfig};
    use crate::tensor::{standard_normal, Dtype, RngSeed};

    fn spawn_echo() -> std::net::SocketAddr {
        let (tx, rx) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            let _ = serve_tcp("127.0.0.1:0", move |addr| {
                tx.send(addr).unwrap();
            });
        });
        rx.recv().expect("echo server failed to bind")
    }

    #[test]
    fn echo_round_trip_is_bit_exact() {
        let addr = spawn_echo();
        let client = ExternalDenoiser::new(ExternalDenoiserConfig::new(Endpoint::Tcp(
            addr.to_string(),
        )));
        for seed in 0..3u64 {
            let v = standard_normal(&[6, 5], Dtype::Complex128, &mut RngSeed(seed).rng());
            let out = client.denoise(&v, 0.3).unwrap();
            assert_eq!(out, v);
        }
    }

    #[test]
    fn plus_one_server_double() {
        // A server that adds 1.0 to every entry: known test double.
        let (tx, rx) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            let listener = TcpListener::bind("127.0.0.1:0").unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            let (stream, _) = listener.accept().unwrap();
            let mut reader = std::io::BufReader::new(stream.try_clone().unwrap());
            let mut writer = std::io::BufWriter::new(stream);
            while let Ok((tensor, _t)) = protocol::read_request(&mut reader) {
                let bumped = crate::tensor::axpy(
                    1.0,
                    &ones_like(&tensor),
                    &tensor,
                )
                .unwrap();
                protocol::write_response_ok(&mut writer, &bumped).unwrap();
            }
        });
        let addr = rx.recv().unwrap();
        let client = ExternalDenoiser::new(ExternalDenoiserConfig::new(Endpoint::Tcp(
            addr.to_string(),
        )));
        let v = crate::tensor::Tensor::vector(&[1.0, -2.0, 0.0]);
        let out = client.denoise(&v, 0.0).unwrap();
        assert_eq!(out.as_real().unwrap(), &[2.0, -1.0, 1.0]);
    }

    fn ones_like(t: &crate::tensor::Tensor) -> crate::tensor::Tensor {
        let mut ones = crate::tensor::Tensor::zeros(t.shape(), t.dtype());
        match t.dtype() {
            Dtype::Real64 => {
                for x in ones.as_real_mut().unwrap() {
                    *x = 1.0;
                }
            }
            Dtype::Complex128 => {
                for x in ones.as_complex_mut().unwrap() {
                    *x = num_complex::Complex64::new(1.0, 0.0);
                }
            }
        }
        ones
    }

    #[test]
    fn garbage_server_yields_protocol_error_not_crash() {
        let (tx, rx) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            let listener = TcpListener::bind("127.0.0.1:0").unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            let (mut stream, _) = listener.accept().unwrap();
            let mut sink = vec![0u8; 4096];
            let _ = std::io::Read::read(&mut stream, &mut sink);
            std::io::Write::write_all(&mut stream, b"NOPE-not-a-protocol-frame").unwrap();
        });
        let addr = rx.recv().unwrap();
        let client = ExternalDenoiser::new(ExternalDenoiserConfig::new(Endpoint::Tcp(
            addr.to_string(),
        )));
        let v = crate::tensor::Tensor::vector(&[1.0]);
        let err = client.denoise(&v, 0.0).unwrap_err();
        assert!(matches!(err, crate::error::Error::Protocol(_)), "{err:?}");
    }
}
