def wrapper(input, diagonal=0):
    BLOCK_SIZE = 128
    if input.dim() == 1:
        size = input.shape[0] + abs(diagonal)
        output = torch.empty((size, size), dtype=input.dtype, device=input.device)
        if size > 0:
            grid = (triton.cdiv(size * size, BLOCK_SIZE),)
            kernel_embed[grid](input.contiguous(), output, size, diagonal, BLOCK_SIZE=BLOCK_SIZE)
        return output
    rows, cols = input.shape
    if diagonal >= 0:
        n = max(min(rows, cols - diagonal), 0)
        start = diagonal * input.stride(1)
    else:
        n = max(min(rows + diagonal, cols), 0)
        start = -diagonal * input.stride(0)
    output = torch.empty((n,), dtype=input.dtype, device=input.device)
    if n > 0:
        grid = (triton.cdiv(n, BLOCK_SIZE),)
        step = input.stride(0) + input.stride(1)
        kernel_extract[grid](input, output, n, step, start, BLOCK_SIZE=BLOCK_SIZE)
    return output
