//! Encodes a frame with a Y-TAG, prints the bytes, decodes it again and
//! shows a few inputs the decoder rejects.

use hr_wifi::frames::{decode_ytag, encode_with_tag, Frame, MacAddress, YTag};

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect::<Vec<_>>().join(" ")
}

fn main() {
    let sta: MacAddress = "02:00:00:00:03:0b".parse().unwrap();
    let server: MacAddress = "02:00:00:00:00:04".parse().unwrap();
    let pap: MacAddress = "02:00:00:00:01:00".parse().unwrap();
    let relay: MacAddress = "02:00:00:00:02:00".parse().unwrap();

    // the relaying AP addresses the primary AP and keeps the real DA in NA
    let inner = Frame::new(pap, relay, b"hello".to_vec());
    let tag = YTag::new(server, 4711);
    let bytes = encode_with_tag(&inner, &tag).unwrap();
    println!("tag    {}", hex(&tag.to_bytes()));
    println!("frame  {}", hex(&bytes));

    let (untagged, got) = decode_ytag(&bytes).unwrap();
    println!("decoded seq={} na={} downlink={} -> da={} sa={}", got.seq, got.na, got.is_downlink(), untagged.da, untagged.sa);

    let down = YTag::new(sta, 1).downlink();
    println!("downlink tag {}", hex(&down.to_bytes()));

    let mut bad_version = bytes.clone();
    bad_version[22] = 9;
    let mut nested = bytes.clone();
    nested[24..26].copy_from_slice(&YTag::ETHER_TYPE.to_be_bytes());
    let cases: [(&str, &[u8]); 4] = [
        ("truncated", &bytes[..20]),
        ("untagged", &Frame::new(server, sta, vec![1, 2, 3]).to_bytes()),
        ("bad version", &bad_version),
        ("nested tag", &nested),
    ];
    for (name, b) in cases {
        println!("{name:12} -> {}", decode_ytag(b).map(|_| "accepted".to_string()).unwrap_or_else(|e| e.to_string()));
    }
}
